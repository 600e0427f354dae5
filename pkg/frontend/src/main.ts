import { ServiceClient } from "./api.js";
import { QueryBuilderApp } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("service") ?? "http://127.0.0.1:8099";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = new QueryBuilderApp(root, new ServiceClient(base));
void app.init();
