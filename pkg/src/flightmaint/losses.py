import numpy as np
import numpy.typing as npt

from flightmaint.constants import PROBABILITY_EPSILON
from flightmaint.errors import ShapeError
from flightmaint.kernels import log_softmax
from flightmaint.tensor import Tensor
from flightmaint.utils import FloatArray


def bce_loss(probabilities: Tensor, labels: npt.ArrayLike, eps: float = PROBABILITY_EPSILON) -> Tensor:
    """Mean binary cross entropy of probabilities clipped to [eps, 1 - eps].

    Args:
        probabilities: Predicted probabilities of shape B.
        labels: Binary labels of shape B.
        eps: Clipping bound.

    Returns:
        Scalar loss.

    Raises:
        ShapeError: If labels and probabilities hold a different number of elements.
    """
    y = np.asarray(labels, dtype=probabilities.dtype)
    if y.size != probabilities.size:
        raise ShapeError(f"bce_loss: {probabilities.size} probabilities but {y.size} labels")
    y = y.reshape(probabilities.shape)
    p = probabilities.data
    clipped = np.clip(p, eps, 1 - eps)
    inside = (p >= eps) & (p <= 1 - eps)
    count = p.size
    loss = -(y * np.log(clipped) + (1 - y) * np.log1p(-clipped)).mean()

    def backward(g: FloatArray) -> tuple[FloatArray]:
        return (g * inside * (-(y / clipped) + (1 - y) / (1 - clipped)) / count,)

    return Tensor.from_op(np.asarray(loss, dtype=probabilities.dtype), (probabilities,), backward)


def mse_loss(reconstruction: Tensor, target: npt.ArrayLike) -> Tensor:
    diff = reconstruction - np.asarray(target, dtype=reconstruction.dtype)
    return (diff * diff).mean()


def per_sample_mse(reconstruction: FloatArray, target: FloatArray) -> FloatArray:
    """Mean squared residual over every (time, channel) cell of each sample."""
    residual = np.asarray(reconstruction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return (residual * residual).reshape(residual.shape[0], -1).mean(axis=1)


def kld_mixture(mix_logits: Tensor, mu: Tensor, logvar: Tensor) -> Tensor:
    """KL regulariser of a per-dimension Gaussian mixture latent against N(0, 1).

    For every latent dimension with mixture weights w = softmax(mix_logits):
    sum_k w_k KL(N(mu_k, sigma_k^2) || N(0, 1)) + KL(w || Uniform(K)).
    The result is summed over dimensions and averaged over the batch.

    Args:
        mix_logits: Mixture logits of shape B×D×K.
        mu: Component means of shape B×D×K.
        logvar: Component log-variances of shape B×D×K.

    Returns:
        Non-negative scalar.

    Raises:
        ShapeError: If the three inputs do not share a B×D×K shape.
    """
    if not (mix_logits.shape == mu.shape == logvar.shape) or mu.ndim != 3:
        raise ShapeError(f"kld_mixture: shapes {mix_logits.shape}, {mu.shape}, {logvar.shape} must match (B×D×K)")
    components = mu.shape[-1]
    log_w = log_softmax(mix_logits, axis=-1)
    w = log_w.exp()
    gaussian = (mu * mu + logvar.exp() - logvar - 1.0) * 0.5
    categorical = log_w + float(np.log(components))
    per_dimension = (w * gaussian).sum(axis=-1) + (w * categorical).sum(axis=-1)
    return per_dimension.sum(axis=-1).mean()
