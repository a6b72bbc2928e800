"""Boundary refinement and non-maximum suppression.

Refinement snaps anchor-shaped proposals onto grouped-actionness boundaries
when the two agree strongly (tIoU strictly above the threshold); NMS then
prunes near-duplicates for the final ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Proposal, ProposalSet, Source, tiou
from .errors import ConfigError, MetricError


@dataclass(frozen=True)
class RefineConfig:
    iou_threshold: float = 0.75

    def validate(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"refine iou_threshold must lie in (0, 1), got {self.iou_threshold}")


@dataclass(frozen=True)
class NmsConfig:
    iou_threshold: float = 0.8
    max_per_video: int = 100

    def validate(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(f"nms iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.max_per_video < 1:
            raise ConfigError(f"nms max_per_video must be >= 1, got {self.max_per_video}")


def refine(p_ssad: ProposalSet, p_tag: ProposalSet, cfg: RefineConfig) -> ProposalSet:
    """Replace boundaries of matched proposals, keeping their scores.

    Each grouped proposal p_t is matched to its highest-tIoU p_s; the match
    only counts when that tIoU is strictly above the threshold. When several
    p_t claim the same p_s, the highest-tIoU claimant wins (ties: earlier
    start, then shorter). Output has exactly one entry per p_s.
    """
    cfg.validate()
    if p_ssad.video_id != p_tag.video_id:
        raise MetricError(
            f"refine got proposal sets for different videos: "
            f"{p_ssad.video_id!r} vs {p_tag.video_id!r}"
        )
    ssad = list(p_ssad.proposals)
    # winning claimant per p_s index: (tiou, p_t interval)
    claims: dict[int, tuple[float, object]] = {}
    for p_t in p_tag.proposals:
        best_iou = 0.0
        best_idx = -1
        for idx, p_s in enumerate(ssad):
            value = tiou(p_s.interval, p_t.interval)
            if value > best_iou:
                best_iou = value
                best_idx = idx
            elif value == best_iou and best_idx >= 0:
                cur = ssad[best_idx].interval
                cand = p_s.interval
                if (cand.start, cand.length) < (cur.start, cur.length):
                    best_idx = idx
        if best_iou > cfg.iou_threshold:
            held = claims.get(best_idx)
            if held is not None:
                held_iou, held_iv = held
                if best_iou < held_iou:
                    continue
                if best_iou == held_iou and (
                    (p_t.interval.start, p_t.interval.length)
                    >= (held_iv.start, held_iv.length)
                ):
                    continue
            claims[best_idx] = (best_iou, p_t.interval)

    out = []
    for idx, p_s in enumerate(ssad):
        claim = claims.get(idx)
        if claim is None:
            out.append(p_s)
        else:
            out.append(Proposal(claim[1], p_s.score, Source.REFINED))
    return ProposalSet(p_ssad.video_id, tuple(out))


def nms(pset: ProposalSet, cfg: NmsConfig) -> ProposalSet:
    """Greedy suppression in score order.

    A kept proposal discards every remaining one with tiou strictly above the
    threshold, plus exact interval duplicates (so theta = 1.0 still collapses
    copies). Output is truncated to max_per_video.
    """
    cfg.validate()
    remaining = list(pset.proposals)
    kept: list[Proposal] = []
    while remaining and len(kept) < cfg.max_per_video:
        top = remaining.pop(0)
        kept.append(top)
        survivors = []
        for p in remaining:
            if p.interval == top.interval:
                continue
            if tiou(p.interval, top.interval) > cfg.iou_threshold:
                continue
            survivors.append(p)
        remaining = survivors
    return ProposalSet(pset.video_id, tuple(kept))
