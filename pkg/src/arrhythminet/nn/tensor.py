import numpy as np

from ..exceptions import ShapeError

#: Precision used for training and inference. Gradient oracles use float64.
DEFAULT_DTYPE = np.float32


class Tensor:
    """Rank-3 ``(batch, channels, length)`` array with optional gradient.

    Operations never write into an input tensor; they always allocate a new
    one. ``grad`` is filled in by callers that need it (Grad-CAM, tests).
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None, grad=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 3:
            raise ShapeError(
                f"Tensor must be rank 3 (batch, channels, length), got shape {arr.shape}"
            )
        self.data = arr
        self.grad = None
        if grad is not None:
            self.set_grad(grad)

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE):
        return cls(np.zeros(shape, dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def batch(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def length(self):
        return self.data.shape[2]

    @property
    def dtype(self):
        return self.data.dtype

    def set_grad(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"grad shape {grad.shape} does not match values shape {self.data.shape}")
        self.grad = grad

    def numpy(self):
        return self.data

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={'yes' if self.grad is not None else 'no'})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != dtype:
            return x.astype(dtype)
        return x
    return Tensor(x, dtype=dtype)
