/** Qualification quiz: ten gold pairs answered sequentially.
 *
 * Nothing is submitted until every pair is answered (a reload simply
 * restarts), and the unlock token is handed to the caller only on a pass.
 */

import { ArenaApi, Choice, QuizPair } from "./api";

export interface QuizCallbacks {
  onPassed: (token: string) => void;
}

const CHOICES: Choice[] = ["LEFT", "RIGHT", "TIE"];

export class QuizFlow {
  private pairs: QuizPair[] = [];
  private responses: Array<{ pair_id: string; choice: Choice }> = [];
  private position = 0;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ArenaApi,
    private readonly annotator: string,
    private readonly callbacks: QuizCallbacks,
  ) {}

  async start(): Promise<void> {
    this.position = 0;
    this.responses = [];
    try {
      this.pairs = await this.api.getQuiz();
    } catch {
      this.renderRetry("Could not load the quiz.");
      return;
    }
    this.renderCurrentPair();
  }

  private renderRetry(message: string): void {
    this.root.innerHTML = "";
    const note = document.createElement("p");
    note.className = "error";
    note.textContent = message;
    const retry = document.createElement("button");
    retry.className = "retry";
    retry.textContent = "Try again";
    retry.addEventListener("click", () => void this.start());
    this.root.append(note, retry);
  }

  private renderCurrentPair(): void {
    const pair = this.pairs[this.position];
    this.root.innerHTML = "";

    const progress = document.createElement("p");
    progress.className = "quiz-progress";
    progress.textContent = `Question ${this.position + 1} of ${this.pairs.length}`;

    const videos = document.createElement("div");
    videos.className = "side-by-side";
    for (const uri of [pair.left_uri, pair.right_uri]) {
      const video = document.createElement("video");
      video.setAttribute("src", uri);
      video.setAttribute("loop", "");
      videos.append(video);
    }

    const buttons = document.createElement("div");
    buttons.className = "choices";
    for (const choice of CHOICES) {
      const button = document.createElement("button");
      button.className = `choice-${choice.toLowerCase()}`;
      button.textContent =
        choice === "TIE" ? "Tie" : choice === "LEFT" ? "Left is better" : "Right is better";
      button.addEventListener("click", () => this.answer(pair.pair_id, choice));
      buttons.append(button);
    }

    this.root.append(progress, videos, buttons);
  }

  private answer(pairId: string, choice: Choice): void {
    this.responses.push({ pair_id: pairId, choice });
    this.position += 1;
    if (this.position < this.pairs.length) {
      this.renderCurrentPair();
    } else {
      void this.submit();
    }
  }

  private async submit(): Promise<void> {
    let result;
    try {
      result = await this.api.submitQuiz(this.annotator, this.responses);
    } catch {
      // nothing was recorded server-side; offer a clean restart
      this.renderRetry("Could not submit your answers.");
      return;
    }
    this.root.innerHTML = "";
    const verdict = document.createElement("p");
    verdict.className = result.passed ? "quiz-passed" : "quiz-failed";
    verdict.textContent = result.passed
      ? `You passed (${result.correct}/10). Judging is unlocked.`
      : `Not quite (${result.correct}/10). You need at least 8 correct.`;
    this.root.append(verdict);
    if (result.passed && result.token) {
      this.callbacks.onPassed(result.token);
    } else {
      const retake = document.createElement("button");
      retake.className = "retake";
      retake.textContent = "Retake the quiz";
      retake.addEventListener("click", () => void this.start());
      this.root.append(retake);
    }
  }
}
