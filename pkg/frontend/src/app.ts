/** Single-page annotation flow: one (query, positives, negative) card at a time.
 *
 * All labeling state lives server-side; the only thing kept locally is the
 * annotator id, so a page refresh resumes exactly where the server says.
 */

import { ApiClient, ApiError, UiTask } from "./api.js";

const ANNOTATOR_KEY = "rlhn-annotator";

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export class AnnotationApp {
  private annotator: string | null;
  private current: UiTask | null = null;
  private inFlight = false;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly storage: StorageLike,
    private readonly doc: Document = document,
  ) {
    this.annotator = storage.getItem(ANNOTATOR_KEY);
    doc.addEventListener("keydown", (event) => this.onKey(event as KeyboardEvent));
  }

  async start(): Promise<void> {
    if (!this.annotator) {
      this.renderNameForm();
      return;
    }
    await this.loadNext();
  }

  /** True while a label POST is pending; choices are ignored meanwhile. */
  get busy(): boolean {
    return this.inFlight;
  }

  get currentTask(): UiTask | null {
    return this.current;
  }

  async loadNext(): Promise<void> {
    try {
      const body = await this.api.nextTask(this.annotator!);
      if (body.done || body.task === null) {
        this.current = null;
        this.renderDone(body.labeled, body.total);
        return;
      }
      this.current = body.task;
      this.renderTask(body.task, body.labeled, body.total);
    } catch (err) {
      if (err instanceof ApiError) {
        this.renderRetryBanner(err.message);
        return;
      }
      throw err;
    }
  }

  async choose(label: 0 | 1): Promise<void> {
    if (this.inFlight || this.current === null) {
      return;
    }
    this.inFlight = true;
    this.setButtonsDisabled(true);
    try {
      const result = await this.api.submitLabel(
        this.annotator!,
        this.current.pair_id,
        label,
      );
      if (result === "conflict") {
        this.showNotice("Already labeled; skipping forward.");
      } else if (result !== "created") {
        this.showNotice(`Submission rejected (${result}).`);
      }
      this.inFlight = false;
      await this.loadNext();
    } catch (err) {
      this.inFlight = false;
      if (err instanceof ApiError) {
        this.setButtonsDisabled(false);
        this.renderRetryBanner(err.message);
        return;
      }
      throw err;
    }
  }

  private onKey(event: KeyboardEvent): void {
    if (this.current === null) {
      return;
    }
    if (event.key === "1") {
      void this.choose(1);
    } else if (event.key === "2") {
      void this.choose(0);
    }
  }

  private renderNameForm(): void {
    this.root.innerHTML = "";
    const form = this.el("form", "name-form");
    const input = this.el("input", "name-input") as HTMLInputElement;
    input.placeholder = "annotator id";
    const button = this.el("button", "name-submit");
    button.textContent = "Start";
    form.append(input, button);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const name = input.value.trim();
      if (!name) {
        return;
      }
      this.annotator = name;
      this.storage.setItem(ANNOTATOR_KEY, name);
      void this.loadNext();
    });
    this.root.append(form);
  }

  private renderTask(task: UiTask, labeled: number, total: number): void {
    this.root.innerHTML = "";

    const progress = this.el("div", "progress");
    progress.textContent = `${labeled} / ${total} labeled`;

    const query = this.el("div", "panel query-panel");
    query.textContent = task.query;

    const positives = this.el("div", "positives");
    for (const text of task.positives) {
      const panel = this.el("div", "panel positive-panel");
      panel.textContent = text;
      positives.append(panel);
    }

    const negative = this.el("div", "panel negative-panel");
    negative.textContent = task.negative;

    const controls = this.el("div", "controls");
    const relevant = this.el("button", "choice relevant") as HTMLButtonElement;
    relevant.textContent = "Relevant (1)";
    relevant.addEventListener("click", () => void this.choose(1));
    const nonRelevant = this.el("button", "choice non-relevant") as HTMLButtonElement;
    nonRelevant.textContent = "Non-relevant (2)";
    nonRelevant.addEventListener("click", () => void this.choose(0));
    controls.append(relevant, nonRelevant);

    this.root.append(progress, query, positives, negative, controls);
  }

  private renderDone(labeled: number, total: number): void {
    this.root.innerHTML = "";
    const done = this.el("div", "done");
    done.textContent = `All done — ${labeled} of ${total} pairs labeled. Thank you!`;
    this.root.append(done);
  }

  private renderRetryBanner(message: string): void {
    this.removeBanner();
    const banner = this.el("div", "retry-banner");
    const text = this.el("span", "retry-message");
    text.textContent = `Connection problem: ${message}`;
    const retry = this.el("button", "retry-button");
    retry.textContent = "Retry";
    retry.addEventListener("click", () => {
      this.removeBanner();
      void this.loadNext();
    });
    banner.append(text, retry);
    this.root.prepend(banner);
  }

  private removeBanner(): void {
    this.root.querySelector(".retry-banner")?.remove();
  }

  private showNotice(message: string): void {
    const notice = this.el("div", "notice");
    notice.textContent = message;
    this.root.prepend(notice);
  }

  private setButtonsDisabled(disabled: boolean): void {
    for (const button of this.root.querySelectorAll<HTMLButtonElement>("button.choice")) {
      button.disabled = disabled;
    }
  }

  private el(tag: string, className: string): HTMLElement {
    const node = this.doc.createElement(tag);
    node.className = className;
    return node;
  }
}
