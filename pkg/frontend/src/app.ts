/** Application shell: quiz first, judging once a token is issued. */

import { ArenaApi, FetchLike } from "./api";
import { JudgePanel } from "./judge";
import { QuizFlow } from "./quiz";

export { ApiError, ArenaApi } from "./api";
export { QuizFlow } from "./quiz";
export { JudgePanel } from "./judge";

export interface AppConfig {
  /** Base URL of the arena service, the sole runtime configuration value. */
  serviceBaseUrl: string;
  annotator: string;
  fetchFn?: FetchLike;
}

export function mountApp(root: HTMLElement, config: AppConfig): void {
  const fetchFn: FetchLike =
    config.fetchFn ?? ((url, init) => fetch(url, init) as ReturnType<FetchLike>);
  const api = new ArenaApi(config.serviceBaseUrl, fetchFn);

  const quizHost = document.createElement("div");
  quizHost.className = "quiz-host";
  const judgeHost = document.createElement("div");
  judgeHost.className = "judge-host";
  root.append(quizHost, judgeHost);

  const quiz = new QuizFlow(quizHost, api, config.annotator, {
    onPassed: (token) => {
      quizHost.innerHTML = "";
      void new JudgePanel(judgeHost, api, token).start();
    },
  });
  void quiz.start();
}
