"""Response models for the HTTP service."""
from typing import Optional

from pydantic import BaseModel


class Health(BaseModel):
    status: str
    window_id: Optional[int] = None
    records_processed_total: int = 0
    ingest_active: bool = True


class FeatureSummary(BaseModel):
    name: str
    coverage: float
    cardinality: float
    stddev: Optional[float] = None
    mi_score: Optional[float] = None
    quantiles: dict[str, float] = {}


class Alert(BaseModel):
    kind: str
    feature: str
    metric: str
    observed: float
    reference: float
    fired_at: int
    window_id: int


class SnapshotSummary(BaseModel):
    window_id: int
    window_start: int
    window_end: int
    records: int
    rejected: int
    interactions_evaluated: int
    features: list[FeatureSummary]
    alerts: list[Alert]
