/**
 * Browser entry point: wires the session state machine, the row stream, and
 * the trajectory chart to a two-card "now vs before" layout with neutral
 * wording. Never shows latent utility values — only observables.
 */

import { SessionApi } from "./api.js";
import { TrajectoryBuffer, renderChart } from "./chart.js";
import { SessionController, SessionView } from "./session.js";
import { openRowStream, StreamHandle } from "./stream.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

function fmtObservables(values: number[]): string {
  return values.map((v) => v.toFixed(2)).join(", ");
}

export function mount(root: HTMLElement, baseUrl: string): void {
  const api = new SessionApi(baseUrl);
  const controller = new SessionController(api);
  const buffer = new TrajectoryBuffer();
  let stream: StreamHandle | null = null;

  const title = el("h1", {}, "Which felt better?");
  const status = el("p", { class: "status" }, "No session yet.");
  const banner = el("p", { class: "banner", hidden: "hidden" });
  const retryBtn = el("button", { class: "retry" }, "Retry");
  banner.appendChild(retryBtn);

  const cards = el("div", { class: "cards" });
  const currentCard = el("button", { class: "card card-current" });
  const previousCard = el("button", { class: "card card-previous" });
  cards.append(currentCard, previousCard);

  const chartBox = el("div", { class: "chart" });
  const startBtn = el("button", { class: "start" }, "Start thermal session");

  root.append(title, status, banner, cards, chartBox, startBtn);

  function redrawChart(finished: boolean): void {
    if (buffer.length === 0) return;
    chartBox.innerHTML = renderChart(buffer, {
      finished,
      label: "observable vs step",
    });
  }

  function render(view: SessionView): void {
    const locked = view.phase !== "awaiting-feedback";
    currentCard.disabled = locked;
    previousCard.disabled = locked;
    banner.hidden = view.phase !== "error";
    if (view.errorMessage) banner.firstChild!.textContent = view.errorMessage;
    switch (view.phase) {
      case "idle":
        status.textContent = "No session yet.";
        break;
      case "awaiting-feedback": {
        const p = view.prompt!;
        status.textContent = `Step ${p.step} of ${view.horizon}`;
        currentCard.textContent = `Now: ${fmtObservables(p.current.observables)}`;
        previousCard.textContent = `Before: ${fmtObservables(p.previous.observables)}`;
        break;
      }
      case "submitting":
        status.textContent = "Sending your choice…";
        break;
      case "finished":
        status.textContent = "Session finished.";
        redrawChart(true);
        break;
      case "error":
        status.textContent = "Connection problem.";
        break;
    }
  }

  controller.subscribe(render);
  currentCard.addEventListener("click", () => void controller.choose("current"));
  previousCard.addEventListener("click", () => void controller.choose("previous"));
  retryBtn.addEventListener("click", () => void controller.retry());

  startBtn.addEventListener("click", () => {
    startBtn.disabled = true;
    void controller
      .start({ preset: "thermal" })
      .then(() => {
        const id = controller.state.sessionId!;
        stream?.close();
        buffer.clear();
        stream = openRowStream(api.streamUrl(id), {
          onRow: (row) => {
            buffer.add(row.k, row.observables[0] ?? NaN);
            redrawChart(controller.state.phase === "finished");
          },
          onClose: () => redrawChart(true),
        });
      })
      .catch((err) => {
        status.textContent = `Could not start a session: ${String(err)}`;
        startBtn.disabled = false;
      });
  });
}

declare global {
  interface Window {
    PREFLOOP_BASE_URL?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount(
    document.getElementById("app")!,
    window.PREFLOOP_BASE_URL ?? window.location.origin,
  );
}
