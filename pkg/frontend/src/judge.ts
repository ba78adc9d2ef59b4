/** Side-by-side pair judging.
 *
 * The panel shows only what the service exposes (video URIs, task text):
 * policy identities never reach the DOM. Submission unlocks only once a
 * choice is selected and all three text fields (a description of each
 * robot's attempt plus the overall rationale) are non-empty, and each pair
 * is posted exactly once no matter how the button is mashed.
 */

import { ApiError, ArenaApi, Choice, PairAssignment } from "./api";

const CHOICES: Choice[] = ["LEFT", "RIGHT", "TIE"];

export class JudgePanel {
  private current: PairAssignment | null = null;
  private choice: Choice | null = null;
  private submitting = false;
  private judgedCount = 0;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ArenaApi,
    private readonly token: string,
  ) {}

  async start(): Promise<void> {
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    this.choice = null;
    this.submitting = false;
    try {
      this.current = await this.api.nextPair(this.token);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.renderCompletion();
        return;
      }
      this.renderError("Could not fetch the next pair.", () => void this.loadNext());
      return;
    }
    this.renderPair(this.current);
  }

  private renderCompletion(): void {
    this.root.innerHTML = "";
    const done = document.createElement("p");
    done.className = "completion";
    done.textContent = `All done — you judged ${this.judgedCount} pair${
      this.judgedCount === 1 ? "" : "s"
    }.`;
    this.root.append(done);
  }

  private renderError(message: string, retry: () => void): void {
    this.root.innerHTML = "";
    const note = document.createElement("p");
    note.className = "error";
    note.textContent = message;
    const button = document.createElement("button");
    button.className = "retry";
    button.textContent = "Retry";
    button.addEventListener("click", retry);
    this.root.append(note, button);
  }

  private renderPair(pair: PairAssignment): void {
    this.root.innerHTML = "";

    const task = document.createElement("p");
    task.className = "task";
    task.textContent = `Task: ${pair.task}`;

    const videos = document.createElement("div");
    videos.className = "side-by-side";
    const players: HTMLVideoElement[] = [];
    for (const uri of [pair.left_video_uri, pair.right_video_uri]) {
      const video = document.createElement("video");
      video.setAttribute("src", uri);
      video.setAttribute("loop", "");
      // start paused; a single control below restarts both together
      players.push(video);
      videos.append(video);
    }

    const playBoth = document.createElement("button");
    playBoth.className = "play-both";
    playBoth.textContent = "Play both";
    playBoth.addEventListener("click", () => {
      for (const player of players) {
        player.currentTime = 0;
        void player.play?.();
      }
    });

    const leftDescription = this.textarea("left-description", "Describe the left robot's attempt");
    const rightDescription = this.textarea("right-description", "Describe the right robot's attempt");
    const rationale = this.textarea("rationale", "Why did you choose this outcome?");

    const choices = document.createElement("div");
    choices.className = "choices";
    const choiceButtons = new Map<Choice, HTMLButtonElement>();
    for (const choice of CHOICES) {
      const button = document.createElement("button");
      button.className = `choice-${choice.toLowerCase()}`;
      button.textContent =
        choice === "TIE" ? "Tie" : choice === "LEFT" ? "Left is better" : "Right is better";
      button.addEventListener("click", () => {
        this.choice = choice;
        for (const [c, b] of choiceButtons) {
          b.classList.toggle("selected", c === choice);
        }
        refreshSubmit();
      });
      choiceButtons.set(choice, button);
      choices.append(button);
    }

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit judgment";
    submit.disabled = true;

    const inlineError = document.createElement("p");
    inlineError.className = "inline-error";

    const refreshSubmit = (): void => {
      submit.disabled =
        this.submitting ||
        this.choice === null ||
        leftDescription.value.trim() === "" ||
        rightDescription.value.trim() === "" ||
        rationale.value.trim() === "";
    };
    for (const field of [leftDescription, rightDescription, rationale]) {
      field.addEventListener("input", refreshSubmit);
    }

    submit.addEventListener("click", () => {
      if (this.submitting || submit.disabled || this.choice === null) {
        return; // exactly one POST per pair, even under double clicks
      }
      this.submitting = true;
      submit.disabled = true;
      void this.submitCurrent(pair, this.choice, rationale.value, inlineError, () => {
        this.submitting = false;
        refreshSubmit();
      });
    });

    this.root.append(
      task,
      videos,
      playBoth,
      leftDescription,
      rightDescription,
      choices,
      rationale,
      inlineError,
      submit,
    );
  }

  private textarea(className: string, placeholder: string): HTMLTextAreaElement {
    const field = document.createElement("textarea");
    field.className = className;
    field.setAttribute("placeholder", placeholder);
    return field;
  }

  private async submitCurrent(
    pair: PairAssignment,
    choice: Choice,
    rationale: string,
    inlineError: HTMLElement,
    reenable: () => void,
  ): Promise<void> {
    try {
      await this.api.submitPreference(this.token, pair.pair_id, choice, rationale);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // already judged (e.g. a replayed request landed first): move on
        await this.loadNext();
        return;
      }
      if (error instanceof ApiError && error.status === 422) {
        inlineError.textContent = "A written rationale is required.";
        reenable();
        return;
      }
      inlineError.textContent = "Submission failed; please retry.";
      reenable();
      return;
    }
    this.judgedCount += 1;
    await this.loadNext();
  }
}
