// Entry point: passkey login, then route to the console matching the role.

import { ApiClient } from "./api.js";
import { StudentClient } from "./student_view.js";
import { TeacherApi } from "./teacher_api.js";
import { TeacherConsole } from "./teacher_view.js";

function start() {
  const root = document.getElementById("app");
  if (root === null) return;
  root.innerHTML = `
    <h1>exam service</h1>
    <form class="login">
      <input name="user" placeholder="sip:s1@ims.kau.test">
      <input name="passkey" type="password" placeholder="passkey">
      <button type="submit">Sign in</button>
    </form>
    <p class="error"></p>
    <div id="view"></div>`;

  const api = new ApiClient(window.location.origin);
  const form = root.querySelector<HTMLFormElement>(".login");
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const user = (form.querySelector('[name="user"]') as HTMLInputElement).value;
    const passkey = (form.querySelector('[name="passkey"]') as HTMLInputElement).value;
    api
      .login(user, passkey)
      .then((session) => {
        form.remove();
        const view = document.getElementById("view")!;
        if (session.role === "teacher") {
          new TeacherConsole(view, new TeacherApi(api)).start();
        } else {
          new StudentClient(view, api, session.identity).start();
        }
      })
      .catch((err) => {
        const box = root.querySelector(".error");
        if (box !== null) box.textContent = String(err);
      });
  });
}

start();
