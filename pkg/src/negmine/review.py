"""HTTP service for human verification of filter-passed variation groups.

Decisions land in an append-only line-delimited log; the effective verdict
per sample is the one with the latest timestamp (log order breaks ties), so
state recovery is a pure replay and exports are reproducible byte-for-byte
across restarts.

Note: no `from __future__ import annotations` here; FastAPI must resolve the
closure-local request model at runtime.
"""

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from .core import (
    FAILURE_MODES,
    GeneratedSample,
    STATUS_ACCEPTED,
    STATUS_HUMAN_REJECTED,
    STATUS_PASSED,
)
from .manifest import group_samples, load_manifest, sample_to_record

VERDICT_ACCEPT = "accept"
VERDICT_REJECT = "reject"


@dataclass(frozen=True)
class ReviewDecision:
    sample_id: str
    verdict: str
    reviewer: str
    timestamp: str  # ISO-8601 UTC
    reason: Optional[str] = None

    def __post_init__(self):
        if self.verdict not in (VERDICT_ACCEPT, VERDICT_REJECT):
            raise ValueError(f"verdict must be accept or reject, got {self.verdict!r}")
        if not self.reviewer:
            raise ValueError("reviewer must be non-empty")

    def to_record(self) -> dict:
        rec = {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }
        if self.reason is not None:
            rec["reason"] = self.reason
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ReviewDecision":
        return cls(sample_id=rec["sample_id"], verdict=rec["verdict"],
                   reviewer=rec["reviewer"], timestamp=rec["timestamp"],
                   reason=rec.get("reason"))


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class DecisionLog:
    """Append-only decision log; writes are serialized through one lock."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._decisions: List[ReviewDecision] = []
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._decisions.append(
                            ReviewDecision.from_record(json.loads(line)))

    def append(self, decision: ReviewDecision) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision.to_record(), ensure_ascii=False,
                                    separators=(",", ":")) + "\n")
                fh.flush()
            self._decisions.append(decision)

    def decisions(self) -> List[ReviewDecision]:
        with self._lock:
            return list(self._decisions)


def effective_decisions(decisions: Sequence[ReviewDecision]
                        ) -> Dict[str, ReviewDecision]:
    """Latest timestamp wins per sample; log order breaks exact ties."""
    best: Dict[str, Tuple[datetime, int]] = {}
    out: Dict[str, ReviewDecision] = {}
    for index, decision in enumerate(decisions):
        stamp = datetime.fromisoformat(decision.timestamp)
        key = (stamp, index)
        if decision.sample_id not in best or key > best[decision.sample_id]:
            best[decision.sample_id] = key
            out[decision.sample_id] = decision
    return out


def effective_status(sample: GeneratedSample,
                     decision: Optional[ReviewDecision]) -> str:
    if sample.status != STATUS_PASSED or decision is None:
        return sample.status
    return STATUS_ACCEPTED if decision.verdict == VERDICT_ACCEPT \
        else STATUS_HUMAN_REJECTED


def export_curated(samples: Sequence[GeneratedSample],
                   decisions: Sequence[ReviewDecision]
                   ) -> Tuple[List[GeneratedSample], dict]:
    """Curated test-set manifest: filter-passed samples with an accept verdict,
    grouped per source image, plus the variations-per-image distribution."""
    effective = effective_decisions(decisions)
    accepted = [
        s.with_status(STATUS_ACCEPTED)
        for s in samples
        if s.status == STATUS_PASSED
        and effective.get(s.id) is not None
        and effective[s.id].verdict == VERDICT_ACCEPT
    ]
    accepted.sort(key=lambda s: (s.source_pair_id, s.tag.label, s.id))
    per_image: Dict[str, int] = {}
    for s in accepted:
        per_image[s.source_pair_id] = per_image.get(s.source_pair_id, 0) + 1
    by_count: Dict[int, int] = {}
    for count in per_image.values():
        by_count[count] = by_count.get(count, 0) + 1
    distribution = {
        "images": len(per_image),
        "variations": len(accepted),
        "by_variation_count": {str(k): v for k, v in sorted(by_count.items())},
    }
    return accepted, distribution


# ---------------------------------------------------------------------------
# HTTP service

def create_app(manifest_path, decisions_path, ui_dir=None):
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.staticfiles import StaticFiles
    from pydantic import BaseModel, Field

    manifest_path = Path(manifest_path)
    root_dir = manifest_path.parent
    samples = load_manifest(manifest_path)
    by_id = {s.id: s for s in samples}
    log = DecisionLog(decisions_path)

    app = FastAPI(title="negmine review service")

    class DecisionBody(BaseModel):
        verdict: Literal["accept", "reject"]
        reviewer: str = Field(min_length=1)
        reason: Optional[str] = None

    def _sample_json(sample: GeneratedSample,
                     decision: Optional[ReviewDecision]) -> dict:
        rec = sample_to_record(sample)
        rec["status"] = effective_status(sample, decision)
        rec["image_url"] = f"/files/{sample.image.path}"
        if sample.mask_path:
            rec["mask_url"] = f"/files/{sample.mask_path}"
        rec["decision"] = decision.to_record() if decision else None
        return rec

    def _reviewable_groups():
        passed = [s for s in samples if s.status == STATUS_PASSED]
        return group_samples(passed)

    @app.get("/api/groups")
    def get_groups(status: Literal["pending", "reviewed", "all"] = "pending",
                   page: int = Query(default=1, ge=1),
                   page_size: int = Query(default=20, ge=1, le=200)):
        effective = effective_decisions(log.decisions())
        selected = []
        for group in _reviewable_groups():
            decided = [s.id in effective for s in group.samples]
            if status == "pending" and all(decided):
                continue
            if status == "reviewed" and not all(decided):
                continue
            selected.append(group)
        total = len(selected)
        start = (page - 1) * page_size
        page_groups = selected[start:start + page_size]
        return {
            "page": page,
            "page_size": page_size,
            "total_groups": total,
            "total_pages": (total + page_size - 1) // page_size,
            "failure_modes": list(FAILURE_MODES),
            "groups": [
                {
                    "source_pair_id": g.source_pair_id,
                    "tag": g.tag.label,
                    "source_caption": g.samples[0].source_caption,
                    "samples": [_sample_json(s, effective.get(s.id))
                                for s in g.samples],
                }
                for g in page_groups
            ],
        }

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        sample = by_id.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id}")
        effective = effective_decisions(log.decisions())
        return _sample_json(sample, effective.get(sample_id))

    @app.post("/api/samples/{sample_id}/decision", status_code=204)
    def post_decision(sample_id: str, body: DecisionBody):
        sample = by_id.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id}")
        if sample.status != STATUS_PASSED:
            raise HTTPException(
                status_code=409,
                detail=f"sample {sample_id} is {sample.status}, not filter-passed")
        log.append(ReviewDecision(
            sample_id=sample_id,
            verdict=body.verdict,
            reviewer=body.reviewer,
            timestamp=utc_now_iso(),
            reason=body.reason,
        ))
        return Response(status_code=204)

    @app.get("/api/export")
    def get_export(only: str = "accepted"):
        if only != "accepted":
            raise HTTPException(status_code=400,
                                detail="only=accepted is the supported export")
        accepted, _ = export_curated(samples, log.decisions())
        body = "".join(
            json.dumps(sample_to_record(s), ensure_ascii=False,
                       separators=(",", ":")) + "\n"
            for s in accepted)
        return Response(content=body, media_type="application/x-ndjson")

    @app.get("/api/stats")
    def get_stats():
        effective = effective_decisions(log.decisions())
        passed = [s for s in samples if s.status == STATUS_PASSED]
        decided = [s for s in passed if s.id in effective]
        accepted, distribution = export_curated(samples, log.decisions())
        scored = [s for s in samples if s.scores is not None]
        itm_pass = sum(1 for s in scored if s.scores.itm_variation > 0)
        area_pass = sum(1 for s in scored if s.scores.area_score_pct > 14)
        return {
            "total_samples": len(samples),
            "passed": len(passed),
            "reviewed": len(decided),
            "pending": len(passed) - len(decided),
            "accepted": len(accepted),
            "human_rejected": sum(
                1 for s in decided
                if effective[s.id].verdict == VERDICT_REJECT),
            "pass_rates": {
                "itm": itm_pass / len(scored) if scored else 0.0,
                "area": area_pass / len(scored) if scored else 0.0,
                "both": len(passed) / len(samples) if samples else 0.0,
            },
            "distribution": distribution,
        }

    app.mount("/files", StaticFiles(directory=str(root_dir)), name="files")
    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return {
                "service": "negmine review",
                "endpoints": ["/api/groups", "/api/samples/{id}",
                              "/api/samples/{id}/decision", "/api/export",
                              "/api/stats"],
                "ui": "not bundled; build the frontend and pass --ui",
            }

    return app


def serve(manifest_path, decisions_path, host: str = "127.0.0.1",
          port: int = 8000, ui_dir=None) -> None:
    import uvicorn

    app = create_app(manifest_path, decisions_path, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
