/** Application shell: image list, canvas editor, phrase panel, save flow. */

import { ApiClient } from "./api.js";
import { AnnotatorController } from "./controller.js";
import { CanvasEditor } from "./editor.js";
import { commandFor, SHORTCUTS, type Command } from "./keyboard.js";
import { EditorStore } from "./state.js";
import type { AnnotationRecord, ImageListItem } from "./types.js";

const api = new ApiClient("");
const store = new EditorStore();
const controller = new AnnotatorController(store, api);

let images: ImageListItem[] = [];
let currentIndex = -1;
let conflictServerCopy: AnnotationRecord | null = null;

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;

const canvas = $<HTMLCanvasElement>("canvas");
const editor = new CanvasEditor(canvas, store, {
  onChange: () => refreshPanel(),
  onHint: (message) => showHint(message),
});

function showHint(message: string): void {
  const hint = $("hint");
  hint.textContent = message;
  hint.classList.add("visible");
  setTimeout(() => hint.classList.remove("visible"), 2500);
}

function showBanner(message: string, retry: (() => void) | null): void {
  const banner = $("banner");
  banner.innerHTML = "";
  banner.append(message);
  if (retry) {
    const button = document.createElement("button");
    button.textContent = "retry";
    button.onclick = retry;
    banner.append(" ", button);
  }
  banner.classList.add("visible");
}

function hideBanner(): void {
  $("banner").classList.remove("visible");
}

function fitCanvas(): void {
  const holder = $("canvas-holder");
  canvas.width = holder.clientWidth;
  canvas.height = holder.clientHeight;
  editor.render(); // stored geometry is normalized; resize only re-projects
}

async function refreshImageList(): Promise<void> {
  const page = await api.listImages(0, 500);
  images = page.items;
  const list = $("image-list");
  list.innerHTML = "";
  images.forEach((item, index) => {
    const row = document.createElement("button");
    row.className = "image-row" + (index === currentIndex ? " current" : "");
    row.textContent = `${item.annotated ? "✓ " : ""}${item.image_id} (${item.region_count})`;
    row.onclick = () => void openImage(index);
    list.append(row);
  });
  $("progress").textContent = `${images.filter((i) => i.annotated).length}/${images.length} annotated`;
}

async function openImage(index: number): Promise<void> {
  if (index < 0 || index >= images.length) return;
  if (store.dirty && !window.confirm("Discard unsaved changes?")) return;
  currentIndex = index;
  const imageId = images[index].image_id;
  try {
    await controller.load(imageId);
    hideBanner();
  } catch (err) {
    showBanner(`cannot load ${imageId}: ${String(err)}`, () => void openImage(index));
    return;
  }
  const img = new Image();
  img.onload = () => editor.setImage(img);
  img.onerror = () => editor.setImage(null);
  img.src = api.imageFileUrl(imageId);
  editor.setImage(null);
  void refreshImageList();
  refreshPanel();
}

function refreshPanel(): void {
  const record = store.record;
  $("title").textContent = record ? record.image_id : "no image";
  $("version").textContent = record ? `v${record.version}${store.dirty ? " *" : ""}` : "";
  const captionBox = $<HTMLTextAreaElement>("caption");
  if (record && document.activeElement !== captionBox) captionBox.value = record.caption;

  const regionList = $("region-list");
  regionList.innerHTML = "";
  record?.regions.forEach((region, index) => {
    const row = document.createElement("div");
    row.className = "region-row" + (index === store.selection ? " selected" : "");
    const input = document.createElement("input");
    input.value = region.phrase;
    input.id = `phrase-${index}`;
    input.onfocus = () => {
      store.select(index);
      editor.render();
    };
    input.onchange = () => {
      const result = store.setPhrase(index, input.value);
      if (!result.ok) {
        showHint(result.hint);
        input.value = region.phrase;
        input.classList.add("invalid");
      } else {
        input.classList.remove("invalid");
      }
      refreshPanel();
      editor.render();
    };
    const del = document.createElement("button");
    del.textContent = "✕";
    del.onclick = () => {
      store.select(index);
      store.deleteSelected();
      refreshPanel();
      editor.render();
    };
    row.append(input, del);
    regionList.append(row);
  });
  editor.render();
}

async function saveFlow(): Promise<void> {
  let result;
  try {
    result = await controller.save();
  } catch (err) {
    showBanner(`save failed: ${String(err)}`, () => void saveFlow());
    return;
  }
  if (result.status === "clean") {
    showHint("nothing to save");
  } else if (result.status === "saved") {
    showHint(`saved v${result.version}`);
    void refreshImageList();
  } else if (result.status === "invalid") {
    showHint(result.error);
  } else {
    conflictServerCopy = result.server;
    $("conflict").classList.add("visible");
    $("conflict-detail").textContent =
      `Server is at v${result.server.version} with ${result.server.regions.length} region(s); ` +
      `you edited v${store.expectedVersion}.`;
  }
  refreshPanel();
}

async function resolveConflict(choice: "keep-mine" | "take-server"): Promise<void> {
  if (!conflictServerCopy) return;
  $("conflict").classList.remove("visible");
  const result = await controller.resolveConflict(choice, conflictServerCopy);
  conflictServerCopy = null;
  if (result.status === "saved") showHint(`now at v${result.version}`);
  refreshPanel();
}

function runCommand(command: Command): void {
  switch (command) {
    case "next-image":
      void openImage(currentIndex + 1);
      break;
    case "prev-image":
      void openImage(currentIndex - 1);
      break;
    case "delete-region": {
      const result = store.deleteSelected();
      if (!result.ok) showHint(result.hint);
      break;
    }
    case "duplicate-region": {
      // One keystroke duplicates the box; the phrase field gets focus so the
      // next keystrokes type the second phrase for the same object.
      const result = store.duplicateSelected();
      if (!result.ok) {
        showHint(result.hint);
      } else {
        refreshPanel();
        $<HTMLInputElement>(`phrase-${store.selection}`)?.select();
      }
      break;
    }
    case "edit-phrase":
      if (store.selection !== null) $<HTMLInputElement>(`phrase-${store.selection}`)?.select();
      break;
    case "save":
      void saveFlow();
      break;
    case "undo":
      if (!store.undo()) showHint("nothing to undo");
      break;
    case "redo":
      if (!store.redo()) showHint("nothing to redo");
      break;
    case "clear-selection":
      store.select(null);
      $("help").classList.remove("visible");
      (document.activeElement as HTMLElement | null)?.blur?.();
      break;
    case "toggle-help":
      $("help").classList.toggle("visible");
      break;
  }
  refreshPanel();
}

function wireEvents(): void {
  window.addEventListener("resize", fitCanvas);
  window.addEventListener("keydown", (e) => {
    const target = e.target as HTMLElement | null;
    const inTextField =
      target instanceof HTMLInputElement || target instanceof HTMLTextAreaElement;
    const command = commandFor({
      key: e.key,
      ctrl: e.ctrlKey,
      meta: e.metaKey,
      shift: e.shiftKey,
      inTextField,
    });
    if (command) {
      e.preventDefault();
      runCommand(command);
    }
  });
  $<HTMLTextAreaElement>("caption").addEventListener("change", (e) => {
    store.setCaption((e.target as HTMLTextAreaElement).value);
    refreshPanel();
  });
  $("save").onclick = () => void saveFlow();
  $("keep-mine").onclick = () => void resolveConflict("keep-mine");
  $("take-server").onclick = () => void resolveConflict("take-server");

  const help = $("help-body");
  for (const shortcut of SHORTCUTS) {
    const row = document.createElement("div");
    row.innerHTML = `<kbd>${shortcut.keys}</kbd> ${shortcut.label}`;
    help.append(row);
  }
}

async function boot(): Promise<void> {
  wireEvents();
  fitCanvas();
  if (!(await api.health())) {
    showBanner("annotation service unreachable", () => void boot());
    return;
  }
  hideBanner();
  await refreshImageList();
  if (images.length > 0) await openImage(0);
}

void boot();
