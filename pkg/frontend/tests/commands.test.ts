import { describe, expect, it } from "vitest";

import { NULL_COMMAND_TEXT, validateCommand, VOCABULARY } from "../src/commands.js";

describe("validateCommand", () => {
  it("accepts the null command", () => {
    const check = validateCommand("[null]");
    expect(check).toEqual({ ok: true, axes: [0, 0, 0], text: "[null]" });
  });

  it("accepts single direction words", () => {
    const cases: Array<[string, [number, number, number]]> = [
      ["move right", [1, 0, 0]],
      ["move left", [-1, 0, 0]],
      ["move forward", [0, 1, 0]],
      ["move backward", [0, -1, 0]],
      ["move up", [0, 0, 1]],
      ["move down", [0, 0, -1]],
    ];
    for (const [text, axes] of cases) {
      const check = validateCommand(text);
      expect(check.ok, text).toBe(true);
      if (check.ok) expect(check.axes).toEqual(axes);
    }
  });

  it("accepts multi-word commands in x,y,z order", () => {
    const check = validateCommand("move right and forward and down");
    expect(check.ok).toBe(true);
    if (check.ok) expect(check.axes).toEqual([1, 1, -1]);
  });

  it("trims surrounding whitespace", () => {
    const check = validateCommand("  move up  ");
    expect(check.ok).toBe(true);
    if (check.ok) expect(check.text).toBe("move up");
  });

  it("rejects words out of canonical order", () => {
    const check = validateCommand("move up and right");
    expect(check.ok).toBe(false);
    if (!check.ok) expect(check.error).toMatch(/order/);
  });

  it("rejects repeated axes", () => {
    expect(validateCommand("move right and left").ok).toBe(false);
  });

  it("rejects unknown words", () => {
    const check = validateCommand("move sideways");
    expect(check.ok).toBe(false);
    if (!check.ok) expect(check.error).toMatch(/sideways/);
  });

  it("rejects text without the move prefix", () => {
    expect(validateCommand("go right").ok).toBe(false);
    expect(validateCommand("").ok).toBe(false);
    expect(validateCommand("null").ok).toBe(false);
  });

  it("exposes the six-word vocabulary", () => {
    expect(VOCABULARY).toEqual([
      "backward",
      "down",
      "forward",
      "left",
      "right",
      "up",
    ]);
    expect(NULL_COMMAND_TEXT).toBe("[null]");
  });
});
