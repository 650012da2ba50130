/** SVG rendering of the canvas model. Pure string output so it runs
 * anywhere; the browser shell assigns it to innerHTML. */

import type { CanvasModel } from "./editor.js";

const NODE_W = 170;
const NODE_H = 64;

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

export function renderSvg(model: CanvasModel, width = 640, height = 360): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="12">`,
    `<defs><marker id="arrow" viewBox="0 0 8 8" refX="7" refY="4" markerWidth="7" markerHeight="7" orient="auto"><path d="M0,0 L8,4 L0,8 z" fill="#555"/></marker></defs>`,
  ];

  const center = (id: string) => {
    if (id === "$source") return { x: 30, y: height / 2 };
    if (id === "$sink") return { x: width - 30, y: height / 2 };
    const p = model.layout.positions[id] ?? { x: width / 2, y: height / 2 };
    return { x: p.x + NODE_W / 2, y: p.y + NODE_H / 2 };
  };

  parts.push(`<circle cx="30" cy="${height / 2}" r="9" fill="#888"/>`);
  parts.push(`<text x="30" y="${height / 2 + 24}" text-anchor="middle" fill="#666">in</text>`);

  for (const e of model.edges) {
    const a = center(e.from);
    const b = center(e.to);
    const mx = (a.x + b.x) / 2;
    const my = (a.y + b.y) / 2 - 10;
    parts.push(
      `<line x1="${a.x}" y1="${a.y}" x2="${b.x}" y2="${b.y}" stroke="#555" marker-end="url(#arrow)" data-edge="${esc(e.from)}->${esc(e.to)}"/>`,
      `<text x="${mx}" y="${my}" text-anchor="middle" fill="#444" font-style="italic">λ ${esc(e.lambda.name)}</text>`,
    );
  }

  for (const n of model.nodes) {
    const p = model.layout.positions[n.node_id] ?? { x: 0, y: 0 };
    const color = model.groupColor(n.group_id);
    const selected = model.selection === n.node_id;
    const bad = model.violationsFor(n.node_id).length > 0;
    const stroke = bad ? "#d33" : selected ? "#1a6" : "#333";
    parts.push(
      `<g data-node="${esc(n.node_id)}">`,
      `<rect x="${p.x}" y="${p.y}" width="${NODE_W}" height="${NODE_H}" rx="8" fill="${color}" stroke="${stroke}" stroke-width="${bad || selected ? 3 : 1.5}"/>`,
      `<text x="${p.x + 10}" y="${p.y + 24}" font-weight="bold">${esc(n.title)}</text>`,
      `<text x="${p.x + 10}" y="${p.y + 44}" fill="#222">${esc(n.group_id)} · k=${n.judgments_per_unit}</text>`,
      bad
        ? `<text x="${p.x + 10}" y="${p.y + NODE_H + 14}" fill="#d33">${esc(model.violationsFor(n.node_id)[0].code)}</text>`
        : "",
      `</g>`,
    );
  }

  parts.push("</svg>");
  return parts.join("");
}
