import { captionDiff } from "./diff";
import type { ReviewSession, SampleState } from "./state";
import type { Verdict } from "./types";

export interface ViewHandlers {
  onDecide: (verdict: Verdict, reason?: string) => void;
  onRetry: (sampleId: string) => void;
  onSelect: (index: number) => void;
  onMoveGroup: (delta: number) => void;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function scoreBadges(state: SampleState): HTMLElement {
  const scores = state.sample.scores;
  const row = el("div", "scores");
  if (!scores) {
    row.append(el("span", "score", "unscored"));
    return row;
  }
  row.append(
    el("span", "score", `itm ${scores.itm_variation.toFixed(3)}`),
    el("span", "score", `area ${scores.area_score_pct.toFixed(1)}%`),
  );
  if (scores.delta_in_mask !== undefined) {
    row.append(el("span", "score", `delta ${scores.delta_in_mask.toFixed(2)}`));
  }
  return row;
}

function captionWithHighlight(source: string | null, edited: string): HTMLElement {
  const caption = el("p", "caption");
  if (!source) {
    caption.textContent = edited;
    return caption;
  }
  const diff = captionDiff(source, edited);
  caption.append(diff.prefix);
  const mark = el("mark", "diff-added", diff.added);
  caption.append(mark);
  caption.append(diff.suffix);
  return caption;
}

function verdictBadge(state: SampleState): HTMLElement {
  const verdict = state.verdict;
  switch (verdict.kind) {
    case "none":
      return el("span", "verdict verdict-none", "undecided");
    case "saving":
      return el("span", "verdict verdict-saving", `${verdict.verdict}…`);
    case "saved":
      return el("span", `verdict verdict-${verdict.verdict}`, verdict.verdict);
    case "failed":
      return el("span", "verdict verdict-failed",
        `${verdict.verdict} not saved: ${verdict.error}`);
  }
}

function imageCard(url: string, alt: string): HTMLElement {
  const holder = el("div", "image-holder");
  const img = document.createElement("img");
  img.src = url;
  img.alt = alt;
  img.onerror = () => {
    img.remove();
    const placeholder = el("div", "image-placeholder", "image unavailable");
    const retry = el("button", "retry-image", "retry") as HTMLButtonElement;
    retry.onclick = () => {
      holder.replaceChildren(img);
      img.src = `${url.split("#")[0]}#${Date.now()}`;
    };
    placeholder.append(retry);
    holder.append(placeholder);
  };
  holder.append(img);
  return holder;
}

export function render(
  container: HTMLElement,
  session: ReviewSession,
  handlers: ViewHandlers,
  failureModes: string[],
): void {
  container.replaceChildren();
  const group = session.currentGroup;
  const progress = session.progress;
  const header = el("header", "topbar");
  header.append(
    el("h1", "title", "variation review"),
    el("span", "progress",
      `${progress.decided} / ${progress.total} decided · group ` +
      `${session.groups.length ? session.groupIndex + 1 : 0} of ${session.groups.length}`),
    el("span", "keys", "a accept · r reject · ←/→ variant · n/p group"),
  );
  container.append(header);
  if (!group) {
    container.append(el("p", "empty", "nothing to review"));
    return;
  }

  const board = el("div", "board");
  const sourceCard = el("section", "card source-card");
  sourceCard.append(el("h2", undefined, `source · ${group.group.tag}`));
  const first = group.samples[0];
  if (first?.sample.source_caption) {
    sourceCard.append(el("p", "caption", first.sample.source_caption));
  }
  sourceCard.append(el("p", "meta", group.group.source_pair_id));
  board.append(sourceCard);

  group.samples.forEach((state, index) => {
    const selected = index === session.sampleIndex;
    const card = el("section",
      `card variant-card${selected ? " selected" : ""}`);
    card.dataset.sampleId = state.sample.id;
    card.tabIndex = 0;
    card.onclick = () => handlers.onSelect(index);
    card.append(imageCard(state.sample.image_url, state.sample.caption));
    card.append(captionWithHighlight(
      state.sample.source_caption ?? group.group.source_caption,
      state.sample.caption));
    card.append(scoreBadges(state));
    card.append(verdictBadge(state));

    if (state.verdict.kind === "failed") {
      const retry = el("button", "retry", "retry") as HTMLButtonElement;
      retry.onclick = (event) => {
        event.stopPropagation();
        handlers.onRetry(state.sample.id);
      };
      card.append(retry);
    }
    if (selected) {
      const actions = el("div", "actions");
      const accept = el("button", "accept", "accept (a)") as HTMLButtonElement;
      accept.onclick = (event) => {
        event.stopPropagation();
        handlers.onDecide("accept");
      };
      const reject = el("button", "reject", "reject (r)") as HTMLButtonElement;
      reject.onclick = (event) => {
        event.stopPropagation();
        handlers.onDecide("reject");
      };
      actions.append(accept, reject);
      const reasons = el("div", "reasons");
      for (const mode of failureModes) {
        const button = el("button", "reason", mode) as HTMLButtonElement;
        button.onclick = (event) => {
          event.stopPropagation();
          handlers.onDecide("reject", mode);
        };
        reasons.append(button);
      }
      card.append(actions, reasons);
    }
    board.append(card);
  });
  container.append(board);

  const nav = el("footer", "groupnav");
  const prev = el("button", "prev", "previous group (p)") as HTMLButtonElement;
  prev.onclick = () => handlers.onMoveGroup(-1);
  const next = el("button", "next", "next group (n)") as HTMLButtonElement;
  next.onclick = () => handlers.onMoveGroup(1);
  nav.append(prev, next);
  container.append(nav);
}
