"""Cycle, land, head, style, content, adversarial and total losses.

All L1/L2 expectations are per-element means. Masked terms average over the
mask's one-pixels (times channels); an empty mask contributes 0.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from .errors import ShapeError
from .perceptual import FeatureExtractor, gram

logger = logging.getLogger(__name__)


class LossWeights(BaseModel):
    """λ weights of the generator objective; lambda_adv = 0 drops the adversarial term."""
    model_config = ConfigDict(extra="forbid")

    lambda_cy: float = Field(default=50.0, ge=0)
    lambda_l: float = Field(default=0.2, ge=0)
    lambda_h: float = Field(default=0.5, ge=0)
    lambda_s: float = Field(default=1.0, ge=0)
    lambda_c: float = Field(default=0.1, ge=0)
    lambda_adv: float = Field(default=1.0, ge=0)


@dataclass
class LandTerms:
    eye: float = 0.0
    nose: float = 0.0
    lip: float = 0.0


@dataclass
class LossReport:
    """Scalar loss values of one step (or an epoch mean). Ablated terms are None."""
    cycle: float
    land: Optional[float] = None
    land_terms: Optional[LandTerms] = None
    head: Optional[float] = None
    style: Optional[float] = None
    content: Optional[float] = None
    adversarial_g: Optional[float] = None
    generator_total: float = 0.0
    discriminator_total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports: list["LossReport"]) -> "LossReport":
        """Field-wise mean; a field is None if it is None in every report."""
        if not reports:
            raise ValueError("Cannot average an empty list of loss reports")

        def avg(values: Iterable[Optional[float]]) -> Optional[float]:
            present = [v for v in values if v is not None]
            return sum(present) / len(present) if present else None

        land_terms = [r.land_terms for r in reports if r.land_terms is not None]
        return cls(
            cycle=avg(r.cycle for r in reports),
            land=avg(r.land for r in reports),
            land_terms=LandTerms(
                eye=avg(t.eye for t in land_terms),
                nose=avg(t.nose for t in land_terms),
                lip=avg(t.lip for t in land_terms),
            ) if land_terms else None,
            head=avg(r.head for r in reports),
            style=avg(r.style for r in reports),
            content=avg(r.content for r in reports),
            adversarial_g=avg(r.adversarial_g for r in reports),
            generator_total=avg(r.generator_total for r in reports),
            discriminator_total=avg(r.discriminator_total for r in reports),
        )


def _check_same_shape(*tensors: torch.Tensor):
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"Loss inputs differ in shape: {sorted(shapes)}")


def cycle_loss(x: torch.Tensor, y: torch.Tensor, x_x: torch.Tensor, y_y: torch.Tensor) -> torch.Tensor:
    """‖x_x − x‖₁ + ‖y_y − y‖₁ as per-element means."""
    _check_same_shape(x, y, x_x, y_y)
    return F.l1_loss(x_x, x) + F.l1_loss(y_y, y)


def masked_l1(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean |a⊙M − b⊙M| over the mask support; 0 when the mask is empty.

    ``mask`` is B×1×H×W (or B×H×W) and broadcasts over channels.
    """
    _check_same_shape(a, b)
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    mask = mask.to(a.dtype)
    denominator = mask.sum() * a.shape[1]
    if denominator.item() == 0:
        return a.new_zeros(())
    return ((a - b) * mask).abs().sum() / denominator


def land_loss(
    x_y: torch.Tensor,
    x: torch.Tensor,
    y_x: torch.Tensor,
    y: torch.Tensor,
    masks_x: dict[str, torch.Tensor],
    masks_y: dict[str, torch.Tensor],
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Sum over eye/nose/lip of masked L1 on (x_y, x) under x's masks and (y_x, y) under y's."""
    terms: dict[str, torch.Tensor] = {}
    for name in ("eye", "nose", "lip"):
        term = masked_l1(x_y, x, masks_x[name]) + masked_l1(y_x, y, masks_y[name])
        if float(masks_x[name].sum()) == 0 or float(masks_y[name].sum()) == 0:
            logger.debug(f"Empty {name} mask in batch; that side contributes 0")
        terms[name] = term
    return terms["eye"] + terms["nose"] + terms["lip"], terms


def head_loss(
    x_y: torch.Tensor,
    y: torch.Tensor,
    y_x: torch.Tensor,
    x: torch.Tensor,
    m_ht: torch.Tensor,
    m_hr: torch.Tensor,
) -> torch.Tensor:
    """Masked L1 of x_y vs y on the Gat band (from y) plus y_x vs x on the hair band (from x)."""
    return masked_l1(x_y, y, m_ht) + masked_l1(y_x, x, m_hr)


def _gram_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Σ(g(a) − g(b))² / (4N²M²) per sample, averaged over the batch."""
    _, channels, height, width = a.shape
    n, m = channels, height * width
    diff = gram(a) - gram(b)
    return diff.pow(2).sum(dim=(1, 2)).mean() / (4.0 * n ** 2 * m ** 2)


def style_loss(
    x_y: torch.Tensor,
    y: torch.Tensor,
    y_x: torch.Tensor,
    x: torch.Tensor,
    extractor: FeatureExtractor,
    layers: Iterable[str] = ("conv2_2", "conv3_2"),
) -> torch.Tensor:
    """Equal-weight sum over layers of the normalised Gram differences in both directions."""
    layers = list(layers)
    f_xy, f_y = extractor(x_y, layers), extractor(y, layers)
    f_yx, f_x = extractor(y_x, layers), extractor(x, layers)
    total = x_y.new_zeros(())
    for name in layers:
        total = total + _gram_distance(f_xy[name], f_y[name]) + _gram_distance(f_yx[name], f_x[name])
    return total


def content_loss(
    x_y: torch.Tensor,
    x: torch.Tensor,
    y_x: torch.Tensor,
    y: torch.Tensor,
    extractor: FeatureExtractor,
    layers: Iterable[str] = ("conv4_1",),
) -> torch.Tensor:
    """E[(l(x_y) − l(x))²] + E[(l(y_x) − l(y))²] summed over the content layers."""
    layers = list(layers)
    f_xy, f_x = extractor(x_y, layers), extractor(x, layers)
    f_yx, f_y = extractor(y_x, layers), extractor(y, layers)
    total = x_y.new_zeros(())
    for name in layers:
        total = total + F.mse_loss(f_xy[name], f_x[name]) + F.mse_loss(f_yx[name], f_y[name])
    return total


def adversarial_generator_loss(d_x_on_x_y: torch.Tensor, d_y_on_y_x: torch.Tensor) -> torch.Tensor:
    """Least-squares generator term E[(D_x(x_y) − 1)²] + E[(D_y(y_x) − 1)²]."""
    return (d_x_on_x_y - 1).pow(2).mean() + (d_y_on_y_x - 1).pow(2).mean()


def discriminator_loss(
    d_x_on_y: torch.Tensor,
    d_x_on_x_y: torch.Tensor,
    d_y_on_x: torch.Tensor,
    d_y_on_y_x: torch.Tensor,
) -> torch.Tensor:
    """E[(D_x(y) − 1)² + D_x(x_y)²] + E[(D_y(x) − 1)² + D_y(y_x)²], per-patch means."""
    return (
        (d_x_on_y - 1).pow(2).mean()
        + d_x_on_x_y.pow(2).mean()
        + (d_y_on_x - 1).pow(2).mean()
        + d_y_on_y_x.pow(2).mean()
    )


@dataclass
class GeneratorTerms:
    """Unweighted generator loss parts; None marks an ablated term."""
    cycle: torch.Tensor
    land: Optional[torch.Tensor] = None
    head: Optional[torch.Tensor] = None
    style: Optional[torch.Tensor] = None
    content: Optional[torch.Tensor] = None
    adversarial: Optional[torch.Tensor] = None
    land_terms: dict[str, torch.Tensor] = field(default_factory=dict)


def generator_total(parts: GeneratorTerms, w: LossWeights) -> torch.Tensor:
    """λ_cy·L_cy + λ_l·L_l + λ_h·L_h + λ_s·L_s + λ_c·L_c (+ λ_adv·L_adv when λ_adv > 0)."""
    total = w.lambda_cy * parts.cycle
    for value, weight in (
        (parts.land, w.lambda_l),
        (parts.head, w.lambda_h),
        (parts.style, w.lambda_s),
        (parts.content, w.lambda_c),
    ):
        if value is not None:
            total = total + weight * value
    if w.lambda_adv > 0 and parts.adversarial is not None:
        total = total + w.lambda_adv * parts.adversarial
    return total


def _item(value: Optional[torch.Tensor]) -> Optional[float]:
    return None if value is None else float(value.detach())


def make_report(parts: GeneratorTerms, g_total: torch.Tensor, d_total: torch.Tensor) -> LossReport:
    return LossReport(
        cycle=_item(parts.cycle),
        land=_item(parts.land),
        land_terms=LandTerms(**{k: float(v.detach()) for k, v in parts.land_terms.items()})
        if parts.land is not None else None,
        head=_item(parts.head),
        style=_item(parts.style),
        content=_item(parts.content),
        adversarial_g=_item(parts.adversarial),
        generator_total=float(g_total.detach()),
        discriminator_total=float(d_total.detach()),
    )


def first_non_finite(report: LossReport) -> Optional[str]:
    """Name of the first NaN/inf entry of ``report``, if any."""
    for name, value in report.to_dict().items():
        if isinstance(value, float) and not math.isfinite(value):
            return name
    return None
