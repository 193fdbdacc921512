# tpgsr/events.py

from typing import Dict, Literal

from pydantic import BaseModel, Field


class TrainingEvent(BaseModel):
    """One record on a training event stream."""

    kind: Literal["step", "epoch", "eval"]
    phase: str
    epoch: int = 0
    step: int = 0
    metrics: Dict[str, float] = Field(default_factory=dict)

    def csv_row(self) -> Dict[str, object]:
        return {"phase": self.phase, "epoch": self.epoch, "step": self.step, **self.metrics}
