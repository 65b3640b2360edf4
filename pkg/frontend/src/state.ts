import type { GroupDto, SampleDto, Verdict } from "./types";

/**
 * Local verdict lifecycle for one sample card.
 *
 * none -> saving (optimistic, POST in flight) -> saved (server confirmed)
 *                                             -> failed (rollback + retry)
 *
 * A verdict is only ever displayed as saved once the server confirmed it;
 * decisions already known to the server arrive as saved.
 */
export type VerdictState =
  | { kind: "none" }
  | { kind: "saving"; verdict: Verdict; reason?: string }
  | { kind: "saved"; verdict: Verdict; reason?: string }
  | { kind: "failed"; verdict: Verdict; reason?: string; error: string };

export interface SampleState {
  sample: SampleDto;
  verdict: VerdictState;
}

export interface GroupState {
  group: GroupDto;
  samples: SampleState[];
}

export interface Progress {
  decided: number;
  total: number;
}

function initialVerdict(sample: SampleDto): VerdictState {
  if (sample.decision) {
    return {
      kind: "saved",
      verdict: sample.decision.verdict,
      reason: sample.decision.reason,
    };
  }
  return { kind: "none" };
}

/** Pure queue/cursor state for a review session; the view renders it and the
 * controller drives transitions around API calls. */
export class ReviewSession {
  readonly groups: GroupState[];
  groupIndex = 0;
  sampleIndex = 0;

  constructor(groups: GroupDto[]) {
    this.groups = groups.map((group) => ({
      group,
      samples: group.samples.map((sample) => ({
        sample,
        verdict: initialVerdict(sample),
      })),
    }));
  }

  get currentGroup(): GroupState | undefined {
    return this.groups[this.groupIndex];
  }

  get currentSample(): SampleState | undefined {
    return this.currentGroup?.samples[this.sampleIndex];
  }

  private find(sampleId: string): SampleState | undefined {
    for (const group of this.groups) {
      for (const state of group.samples) {
        if (state.sample.id === sampleId) {
          return state;
        }
      }
    }
    return undefined;
  }

  /** Optimistically mark the current sample; returns the affected sample id
   * or null when there is nothing to decide. */
  decide(verdict: Verdict, reason?: string): string | null {
    const state = this.currentSample;
    if (!state || state.verdict.kind === "saving") {
      return null;
    }
    state.verdict = { kind: "saving", verdict, reason };
    return state.sample.id;
  }

  /** Server confirmed: the verdict may now be displayed as saved. */
  confirm(sampleId: string): void {
    const state = this.find(sampleId);
    if (state && state.verdict.kind === "saving") {
      state.verdict = {
        kind: "saved",
        verdict: state.verdict.verdict,
        reason: state.verdict.reason,
      };
    }
  }

  /** POST failed: roll the verdict back and surface the error. */
  rollback(sampleId: string, error: string): void {
    const state = this.find(sampleId);
    if (state && state.verdict.kind === "saving") {
      state.verdict = {
        kind: "failed",
        verdict: state.verdict.verdict,
        reason: state.verdict.reason,
        error,
      };
    }
  }

  /** Re-queue a failed decision; returns what should be resubmitted. */
  retry(sampleId: string): { verdict: Verdict; reason?: string } | null {
    const state = this.find(sampleId);
    if (!state || state.verdict.kind !== "failed") {
      return null;
    }
    const { verdict, reason } = state.verdict;
    state.verdict = { kind: "saving", verdict, reason };
    return { verdict, reason };
  }

  /** The server state changed underneath us (another session decided). */
  applyRemoteDecision(sampleId: string, verdict: Verdict, reason?: string): boolean {
    const state = this.find(sampleId);
    if (!state) {
      return false;
    }
    const conflicting =
      state.verdict.kind === "saved" && state.verdict.verdict !== verdict;
    state.verdict = { kind: "saved", verdict, reason };
    return conflicting;
  }

  /** Advance the cursor to the next undecided sample, crossing group
   * boundaries; returns false when the queue is exhausted. */
  advance(): boolean {
    let g = this.groupIndex;
    let s = this.sampleIndex + 1;
    while (g < this.groups.length) {
      const samples = this.groups[g].samples;
      while (s < samples.length) {
        if (samples[s].verdict.kind === "none" ||
            samples[s].verdict.kind === "failed") {
          this.groupIndex = g;
          this.sampleIndex = s;
          return true;
        }
        s += 1;
      }
      g += 1;
      s = 0;
    }
    return false;
  }

  moveCursor(delta: number): void {
    const group = this.currentGroup;
    if (!group) {
      return;
    }
    const next = this.sampleIndex + delta;
    if (next >= 0 && next < group.samples.length) {
      this.sampleIndex = next;
    }
  }

  moveGroup(delta: number): void {
    const next = this.groupIndex + delta;
    if (next >= 0 && next < this.groups.length) {
      this.groupIndex = next;
      this.sampleIndex = 0;
    }
  }

  get progress(): Progress {
    let decided = 0;
    let total = 0;
    for (const group of this.groups) {
      for (const state of group.samples) {
        total += 1;
        if (state.verdict.kind === "saved") {
          decided += 1;
        }
      }
    }
    return { decided, total };
  }
}
