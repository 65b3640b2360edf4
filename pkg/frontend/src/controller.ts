import { ReviewApi } from "./api";
import { ReviewSession } from "./state";
import { render } from "./view";
import type { Verdict } from "./types";

export interface ControllerOptions {
  reviewer: string;
  pageSize?: number;
}

/**
 * Wires the session state machine to the service API and the DOM.
 *
 * Decisions are optimistic: the card flips to "saving" immediately, advances
 * only after the server confirms, and rolls back with a retry affordance on
 * failure. Progress counters reconcile against /api/stats after each write.
 */
export class ReviewController {
  session: ReviewSession = new ReviewSession([]);
  failureModes: string[] = [];
  conflictNotice: string | null = null;

  constructor(
    private readonly container: HTMLElement,
    private readonly api: ReviewApi,
    private readonly options: ControllerOptions,
  ) {}

  async load(): Promise<void> {
    const page = await this.api.groups("pending", 1, this.options.pageSize ?? 50);
    this.failureModes = page.failure_modes;
    this.session = new ReviewSession(page.groups);
    this.renderNow();
  }

  renderNow(): void {
    render(this.container, this.session, {
      onDecide: (verdict, reason) => void this.decide(verdict, reason),
      onRetry: (sampleId) => void this.retry(sampleId),
      onSelect: (index) => {
        this.session.sampleIndex = index;
        this.renderNow();
      },
      onMoveGroup: (delta) => {
        this.session.moveGroup(delta);
        this.renderNow();
      },
    }, this.failureModes);
  }

  async decide(verdict: Verdict, reason?: string): Promise<void> {
    const sampleId = this.session.decide(verdict, reason);
    if (sampleId === null) {
      return;
    }
    this.renderNow();
    await this.submit(sampleId, verdict, reason);
  }

  async retry(sampleId: string): Promise<void> {
    const resubmit = this.session.retry(sampleId);
    if (!resubmit) {
      return;
    }
    this.renderNow();
    await this.submit(sampleId, resubmit.verdict, resubmit.reason);
  }

  private async submit(sampleId: string, verdict: Verdict,
                       reason?: string): Promise<void> {
    try {
      await this.api.postDecision(sampleId, verdict, this.options.reviewer, reason);
    } catch (error) {
      this.session.rollback(sampleId, String(error));
      this.renderNow();
      return;
    }
    this.session.confirm(sampleId);
    this.session.advance();
    this.renderNow();
    await this.reconcile(sampleId);
  }

  /** Pull the server's view after a write: progress counters and the
   * sample's effective decision (conflict surfacing). */
  private async reconcile(sampleId: string): Promise<void> {
    try {
      const sample = await this.api.sample(sampleId);
      if (sample.decision) {
        const conflict = this.session.applyRemoteDecision(
          sampleId, sample.decision.verdict, sample.decision.reason);
        if (conflict) {
          this.conflictNotice =
            `verdict for ${sampleId} was changed by ${sample.decision.reviewer}`;
        }
      }
    } catch {
      // reconciliation is best-effort; the saved state is already confirmed
    }
    this.renderNow();
  }

  handleKey(event: KeyboardEvent): void {
    switch (event.key) {
      case "a":
        void this.decide("accept");
        break;
      case "r":
        void this.decide("reject");
        break;
      case "ArrowRight":
        this.session.moveCursor(1);
        this.renderNow();
        break;
      case "ArrowLeft":
        this.session.moveCursor(-1);
        this.renderNow();
        break;
      case "n":
        this.session.moveGroup(1);
        this.renderNow();
        break;
      case "p":
        this.session.moveGroup(-1);
        this.renderNow();
        break;
      default:
        return;
    }
    event.preventDefault();
  }
}
