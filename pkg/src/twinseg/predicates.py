"""Pairwise spatial/motion predicates over scene-graph nodes.

Shared by relation-edge computation and the reasoning DSL so both views of
"behind", "near", etc. cannot drift apart.  Vertical/horizontal relations
compare centroids with a small dead zone to avoid jitter flips; "near"
means closer than a quarter of the frame diagonal.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

from .errors import MissingCapability
from .masks import bbox_intersects

if TYPE_CHECKING:
    from .twin import ObjectNode

DEAD_ZONE_PX = 2.0
NEAR_FRACTION = 0.25


def _require_depth(i: "ObjectNode", j: "ObjectNode") -> tuple[float, float]:
    zi, zj = i.h_spa.z, j.h_spa.z
    if zi is None or zj is None:
        raise MissingCapability("depth predicate on nodes without depth")
    return zi, zj


def pred_behind(i: "ObjectNode", j: "ObjectNode") -> bool:
    """Strictly larger depth AND projected bbox overlap."""
    zi, zj = _require_depth(i, j)
    return zi > zj and bbox_intersects(i.h_spa.bbox, j.h_spa.bbox)


def pred_in_front_of(i: "ObjectNode", j: "ObjectNode") -> bool:
    zi, zj = _require_depth(i, j)
    return zi < zj and bbox_intersects(i.h_spa.bbox, j.h_spa.bbox)


def pred_above(i: "ObjectNode", j: "ObjectNode") -> bool:
    return i.h_spa.centroid[1] < j.h_spa.centroid[1] - DEAD_ZONE_PX


def pred_below(i: "ObjectNode", j: "ObjectNode") -> bool:
    return i.h_spa.centroid[1] > j.h_spa.centroid[1] + DEAD_ZONE_PX


def pred_left_of(i: "ObjectNode", j: "ObjectNode") -> bool:
    return i.h_spa.centroid[0] < j.h_spa.centroid[0] - DEAD_ZONE_PX


def pred_right_of(i: "ObjectNode", j: "ObjectNode") -> bool:
    return i.h_spa.centroid[0] > j.h_spa.centroid[0] + DEAD_ZONE_PX


def pred_near(i: "ObjectNode", j: "ObjectNode", diagonal: float) -> bool:
    ci, cj = i.h_spa.centroid, j.h_spa.centroid
    return math.hypot(ci[0] - cj[0], ci[1] - cj[1]) < NEAR_FRACTION * diagonal


def pred_overlaps(i: "ObjectNode", j: "ObjectNode") -> bool:
    return bbox_intersects(i.h_spa.bbox, j.h_spa.bbox)


def _approach(i: "ObjectNode", j: "ObjectNode") -> float:
    vx, vy = i.h_temp.velocity
    ci, cj = i.h_spa.centroid, j.h_spa.centroid
    return vx * (cj[0] - ci[0]) + vy * (cj[1] - ci[1])


def pred_moving_toward(i: "ObjectNode", j: "ObjectNode") -> bool:
    return _approach(i, j) > 0.0


def pred_moving_away(i: "ObjectNode", j: "ObjectNode") -> bool:
    return _approach(i, j) < 0.0


SPATIAL_PREDICATES = {
    "behind": pred_behind,
    "in_front_of": pred_in_front_of,
    "above": pred_above,
    "below": pred_below,
    "left_of": pred_left_of,
    "right_of": pred_right_of,
    "overlaps": pred_overlaps,
}

DEPTH_PREDICATES = frozenset({"behind", "in_front_of"})


def holds(label: str, i: "ObjectNode", j: "ObjectNode", *, diagonal: float) -> bool:
    """Dispatch by relation label (near needs the frame diagonal)."""
    if label == "near":
        return pred_near(i, j, diagonal)
    if label == "moving_toward":
        return pred_moving_toward(i, j)
    if label == "moving_away":
        return pred_moving_away(i, j)
    return SPATIAL_PREDICATES[label](i, j)
