export interface CaptionDiff {
  prefix: string;
  removed: string; // span from the source caption
  added: string;   // replacement span in the edited caption
  suffix: string;
}

/**
 * Single-span diff between the source caption and its edited version via
 * longest common prefix/suffix, snapped to word boundaries. The pipeline
 * replaces exactly one span, so this recovers the substituted keyword even
 * when it shares leading or trailing characters with the replaced word.
 */
export function captionDiff(source: string, edited: string): CaptionDiff {
  let start = 0;
  const max = Math.min(source.length, edited.length);
  while (start < max && source[start] === edited[start]) {
    start += 1;
  }
  let sourceEnd = source.length;
  let editedEnd = edited.length;
  while (
    sourceEnd > start &&
    editedEnd > start &&
    source[sourceEnd - 1] === edited[editedEnd - 1]
  ) {
    sourceEnd -= 1;
    editedEnd -= 1;
  }
  if (start !== editedEnd || start !== sourceEnd) {
    // widen to whole words (the shared prefix/suffix is identical in both
    // strings, so both ends move in lockstep)
    while (start > 0 && edited[start - 1] !== " ") {
      start -= 1;
    }
    while (editedEnd < edited.length && edited[editedEnd] !== " ") {
      editedEnd += 1;
      sourceEnd += 1;
    }
  }
  return {
    prefix: edited.slice(0, start),
    removed: source.slice(start, sourceEnd),
    added: edited.slice(start, editedEnd),
    suffix: edited.slice(editedEnd),
  };
}
