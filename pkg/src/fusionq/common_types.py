"""Common type aliases shared by the whole package.

`Tensor`: a dense `torch.float64` tensor; all differentiable computation uses it.

`FloatArray` / `IntArray`: `numpy` arrays used by the synthetic world, which has
no gradients to carry.

`Matrix4`: a homogeneous 4×4 transform stored as `FloatArray` or `Tensor`
depending on the side of the simulator/model boundary it lives on.
"""

from typing import TypeAlias

import numpy as np
import numpy.typing as npt
import torch


DTYPE = torch.float64

Tensor: TypeAlias = torch.Tensor
FloatArray: TypeAlias = npt.NDArray[np.float64]
IntArray: TypeAlias = npt.NDArray[np.int64]
BoolArray: TypeAlias = npt.NDArray[np.bool_]
Matrix4: TypeAlias = FloatArray | Tensor
