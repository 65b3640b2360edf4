import { ReviewApi } from "./api";
import { ReviewController } from "./controller";

function reviewerName(): string {
  const stored = window.localStorage.getItem("negmine-reviewer");
  if (stored) {
    return stored;
  }
  const name = window.prompt("reviewer name", "reviewer") || "reviewer";
  window.localStorage.setItem("negmine-reviewer", name);
  return name;
}

async function boot(): Promise<void> {
  const container = document.getElementById("app");
  if (!container) {
    throw new Error("missing #app container");
  }
  const controller = new ReviewController(container, new ReviewApi(), {
    reviewer: reviewerName(),
  });
  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) {
      return;
    }
    controller.handleKey(event);
  });
  try {
    await controller.load();
  } catch (error) {
    container.textContent = `failed to load review queue: ${String(error)}`;
  }
}

void boot();
