import { ApiClient } from "./api.js";
import { TrialFlow } from "./session.js";
import { mount } from "./ui.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app container");
}
mount(root, new TrialFlow(new ApiClient("")));
