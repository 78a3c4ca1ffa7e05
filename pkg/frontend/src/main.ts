import { ApiClient } from "./api.js";
import { ReviewBuffer, localStorageStore } from "./buffer.js";
import { Dashboard } from "./dashboard.js";
import { ReviewScreen } from "./review.js";

// Hash routes:
//   #/review?project=1&coder=ana&token=...
//   #/dashboard?project=1&coder_a=ana&coder_b=ben&token=...
// The token is remembered in localStorage so review links can be reopened.

function params(): URLSearchParams {
  const hash = window.location.hash;
  const q = hash.indexOf("?");
  return new URLSearchParams(q === -1 ? "" : hash.slice(q + 1));
}

function route(): string {
  const hash = window.location.hash;
  const q = hash.indexOf("?");
  return (q === -1 ? hash : hash.slice(0, q)).replace(/^#/, "");
}

function rememberToken(p: URLSearchParams): string | null {
  const fromUrl = p.get("token");
  if (fromUrl) {
    try {
      localStorage.setItem("labelforge.token", fromUrl);
    } catch {
      // private mode; the in-page token still works
    }
    return fromUrl;
  }
  try {
    return localStorage.getItem("labelforge.token");
  } catch {
    return null;
  }
}

let active: { stop(): void } | null = null;

function landing(root: HTMLElement): void {
  root.innerHTML = `
    <div class="landing">
      <h1>labelforge</h1>
      <p>Open a review link from your operator, or:</p>
      <ul>
        <li><code>#/review?project=ID&amp;coder=YOU&amp;token=...</code></li>
        <li><code>#/dashboard?project=ID&amp;token=...</code></li>
      </ul>
    </div>`;
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;
  active?.stop();
  active = null;

  const p = params();
  const token = rememberToken(p);
  const api = new ApiClient(token);
  const project = Number(p.get("project") ?? "0");

  switch (route()) {
    case "/review": {
      const screen = new ReviewScreen(
        root,
        api,
        {
          project,
          coderId: p.get("coder") ?? "",
          cardsPerSitting: Number(p.get("sitting") ?? "25"),
        },
        new ReviewBuffer(localStorageStore())
      );
      active = screen;
      void screen.start();
      break;
    }
    case "/dashboard": {
      const dash = new Dashboard(root, api, {
        project,
        coderA: p.get("coder_a") ?? undefined,
        coderB: p.get("coder_b") ?? undefined,
      });
      active = dash;
      void dash.start();
      break;
    }
    default:
      landing(root);
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.addEventListener("hashchange", boot);
  boot();
}
