// Tiny HTML-string helpers shared by the views. Views are pure functions
// from API documents to markup; the app glues the strings into the page.

export function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function jsonCell(value: unknown): string {
  return `<code>${esc(JSON.stringify(value))}</code>`;
}
