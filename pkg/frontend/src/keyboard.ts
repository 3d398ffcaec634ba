/** Keyboard-first command map. Annotators work through ~a thousand images,
 * so every common action has a single-key shortcut. */

export type Command =
  | "next-image"
  | "prev-image"
  | "delete-region"
  | "duplicate-region"
  | "edit-phrase"
  | "save"
  | "undo"
  | "redo"
  | "clear-selection"
  | "toggle-help";

export interface KeyStroke {
  key: string;
  ctrl?: boolean;
  meta?: boolean;
  shift?: boolean;
  inTextField?: boolean;
}

export const SHORTCUTS: { keys: string; command: Command; label: string }[] = [
  { keys: "→ / l", command: "next-image", label: "next image" },
  { keys: "← / h", command: "prev-image", label: "previous image" },
  { keys: "Delete / x", command: "delete-region", label: "delete selected box" },
  { keys: "d", command: "duplicate-region", label: "duplicate box (then type its phrase)" },
  { keys: "Enter / e", command: "edit-phrase", label: "edit selected phrase" },
  { keys: "Ctrl+S / s", command: "save", label: "save to server" },
  { keys: "Ctrl+Z / u", command: "undo", label: "undo" },
  { keys: "Ctrl+Y / Ctrl+Shift+Z", command: "redo", label: "redo" },
  { keys: "Escape", command: "clear-selection", label: "clear selection / close dialog" },
  { keys: "?", command: "toggle-help", label: "show shortcuts" },
];

export function commandFor(stroke: KeyStroke): Command | null {
  const mod = Boolean(stroke.ctrl || stroke.meta);
  if (mod) {
    const key = stroke.key.toLowerCase();
    if (key === "s") return "save";
    if (key === "z") return stroke.shift ? "redo" : "undo";
    if (key === "y") return "redo";
    return null;
  }
  if (stroke.inTextField) {
    // While typing, only Escape leaves the field; everything else is text.
    return stroke.key === "Escape" ? "clear-selection" : null;
  }
  switch (stroke.key) {
    case "ArrowRight":
    case "l":
      return "next-image";
    case "ArrowLeft":
    case "h":
      return "prev-image";
    case "Delete":
    case "Backspace":
    case "x":
      return "delete-region";
    case "d":
      return "duplicate-region";
    case "Enter":
    case "e":
      return "edit-phrase";
    case "s":
      return "save";
    case "u":
      return "undo";
    case "Escape":
      return "clear-selection";
    case "?":
      return "toggle-help";
    default:
      return null;
  }
}
