/** DOM wiring: start form, side-by-side trial screen, completion screen.
 * Images render at native resolution (1 CSS px = 1 image px) on a neutral
 * mid-gray surround; digits 0-3 with arrow modifiers mirror the buttons. */

import { SCORE_LABELS, SCORE_VALUES, TrialFlow } from "./session.js";

export function mount(root: HTMLElement, flow: TrialFlow): void {
  flow.onChange(() => render(root, flow));
  render(root, flow);
  document.addEventListener("keydown", (event) => handleKey(event, flow));
}

function render(root: HTMLElement, flow: TrialFlow): void {
  const state = flow.getState();
  root.replaceChildren();
  switch (state.phase) {
    case "start": {
      const form = el("form", { class: "start-form" });
      const label = el("label", {}, "Subject id: ");
      const input = el("input", { type: "text", id: "subject-id", autocomplete: "off" });
      label.appendChild(input);
      const button = el("button", { type: "submit" }, "Start");
      form.append(label, button);
      if (state.error) {
        form.appendChild(el("p", { class: "error" }, state.error));
      }
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        void flow.start((input as HTMLInputElement).value);
      });
      root.appendChild(form);
      break;
    }
    case "loading": {
      root.appendChild(el("p", {}, "loading..."));
      break;
    }
    case "trial": {
      const { view } = state;
      root.appendChild(
        el("p", { class: "progress" }, `Trial ${view.index} of ${view.total}`),
      );
      const pair = el("div", { class: "pair" });
      let loaded = 0;
      for (const side of ["left", "right"] as const) {
        const img = el("img", {
          src: side === "left" ? view.leftUrl : view.rightUrl,
          class: `stimulus ${side}`,
          draggable: "false",
        }) as HTMLImageElement;
        img.addEventListener("load", () => {
          loaded += 1;
          if (loaded === 2) {
            flow.markImagesReady();
          }
        });
        pair.appendChild(img);
      }
      root.appendChild(pair);
      const buttons = el("div", { class: "scores" });
      for (const value of SCORE_VALUES) {
        const button = el(
          "button",
          { type: "button", "data-score": String(value) },
          `${value > 0 ? "+" : ""}${value} (${SCORE_LABELS[value]})`,
        ) as HTMLButtonElement;
        button.disabled = !flow.canScore();
        button.addEventListener("click", () => void flow.submit(value));
        buttons.appendChild(button);
      }
      root.appendChild(buttons);
      if (flow.hasPendingScore()) {
        const retry = el("button", { type: "button", class: "retry" }, "Retry submit");
        retry.addEventListener("click", () => void flow.retry());
        root.appendChild(el("p", { class: "error" }, "submission failed, score kept locally "));
        root.appendChild(retry);
      }
      break;
    }
    case "done": {
      root.appendChild(el("h2", {}, "Thank you!"));
      root.appendChild(el("p", {}, `${state.completed} comparisons completed`));
      break;
    }
    case "failed": {
      root.appendChild(el("p", { class: "error" }, state.message));
      const retry = el("button", { type: "button" }, "Reload");
      retry.addEventListener("click", () => location.reload());
      root.appendChild(retry);
      break;
    }
  }
}

function handleKey(event: KeyboardEvent, flow: TrialFlow): void {
  if (!flow.canScore()) {
    return;
  }
  // digit d => +d (left better), Shift+digit => -d (right better),
  // arrows => +-1, 0 => similar
  const digit = Number.parseInt(event.key, 10);
  if (!Number.isNaN(digit) && digit >= 0 && digit <= 3) {
    void flow.submit(digit);
  } else if (event.key === "ArrowLeft") {
    void flow.submit(1);
  } else if (event.key === "ArrowRight") {
    void flow.submit(-1);
  } else if (/^[!@#]$/.test(event.key)) {
    void flow.submit(-"!@#".indexOf(event.key) - 1);
  }
}

function el(
  tag: string,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}
