/**
 * Client-side validation of refinement-command text, mirroring the
 * training-side vocabulary exactly: "[null]" or
 * "move <word> [and <word> ...]" with direction words in fixed x, y, z
 * order. Invalid text is rejected here and never sent to the session.
 */

export const NULL_COMMAND_TEXT = "[null]";

const WORD_TO_AXIS: Record<string, [number, number]> = {
  right: [0, +1],
  left: [0, -1],
  forward: [1, +1],
  backward: [1, -1],
  up: [2, +1],
  down: [2, -1],
};

export const VOCABULARY = Object.keys(WORD_TO_AXIS).sort();

export type CommandCheck =
  | { ok: true; axes: [number, number, number]; text: string }
  | { ok: false; error: string };

/**
 * Validates operator command text; on success returns the canonical
 * (trimmed) text plus the per-axis signs it encodes.
 */
export function validateCommand(rawText: string): CommandCheck {
  const text = rawText.trim();
  if (text === NULL_COMMAND_TEXT) {
    return { ok: true, axes: [0, 0, 0], text };
  }
  if (!text.startsWith("move ")) {
    return {
      ok: false,
      error:
        `unrecognized command "${text}"; expected "${NULL_COMMAND_TEXT}" or ` +
        `"move <word> [and <word> ...]" with words from ` +
        VOCABULARY.join(", "),
    };
  }
  const axes: [number, number, number] = [0, 0, 0];
  let lastAxis = -1;
  for (const word of text.slice("move ".length).split(" and ")) {
    const key = WORD_TO_AXIS[word];
    if (key === undefined) {
      return {
        ok: false,
        error: `unknown direction word "${word}"; vocabulary: ${VOCABULARY.join(", ")}`,
      };
    }
    const [axis, sign] = key;
    if (axis <= lastAxis) {
      return {
        ok: false,
        error: `direction words out of canonical x,y,z order in "${text}"`,
      };
    }
    axes[axis] = sign;
    lastAxis = axis;
  }
  return { ok: true, axes, text };
}
