/**
 * JSON-lines manifest in the detector package's schema:
 * {id, split, label, feature_path, mask_path} per line, paths relative to
 * the dataset root.
 */

export type Split = 'train-normal' | 'train-anomaly' | 'test'

export interface ManifestEntry {
  id: string
  split: Split
  label: 0 | 1
  feature_path: string
  mask_path: string | null
}

const VALID_SPLITS: Split[] = ['train-normal', 'train-anomaly', 'test']

export function validateEntry(entry: ManifestEntry): void {
  if (!VALID_SPLITS.includes(entry.split)) {
    throw new Error(`entry ${entry.id}: unknown split '${entry.split}'`)
  }
  if (entry.label !== 0 && entry.label !== 1) {
    throw new Error(`entry ${entry.id}: label must be 0 or 1`)
  }
  if (entry.split === 'train-normal' && entry.label !== 0) {
    throw new Error(`entry ${entry.id}: train-normal entries must have label 0`)
  }
  if (entry.split === 'train-anomaly' && entry.label !== 1) {
    throw new Error(`entry ${entry.id}: train-anomaly entries must have label 1`)
  }
}

export function encodeManifest(entries: ManifestEntry[]): string {
  return (
    entries
      .map((entry) => {
        validateEntry(entry)
        // key order matches JSON.stringify of primary's sorted form
        return JSON.stringify({
          feature_path: entry.feature_path,
          id: entry.id,
          label: entry.label,
          mask_path: entry.mask_path,
          split: entry.split,
        })
      })
      .join('\n') + '\n'
  )
}

/** Rows of the label CSV: filename plus the split it belongs to (and the
 * label for test rows; training labels follow from the split). */
export interface LabelRow {
  filename: string
  split: Split
  label: 0 | 1
}

export function parseLabelCsv(text: string): LabelRow[] {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0)
  if (lines.length === 0) throw new Error('label CSV is empty')
  const header = lines[0].split(',').map((c) => c.trim().toLowerCase())
  const fileCol = header.indexOf('filename')
  const splitCol = header.indexOf('split')
  const labelCol = header.indexOf('label')
  if (fileCol < 0 || splitCol < 0) {
    throw new Error("label CSV needs 'filename' and 'split' columns (optional 'label')")
  }
  return lines.slice(1).map((line, i) => {
    const cells = line.split(',').map((c) => c.trim())
    const filename = cells[fileCol]
    const split = cells[splitCol] as Split
    if (!VALID_SPLITS.includes(split)) {
      throw new Error(`row ${i + 2}: unknown split '${split}'`)
    }
    let label: 0 | 1
    if (split === 'train-normal') label = 0
    else if (split === 'train-anomaly') label = 1
    else {
      if (labelCol < 0 || cells[labelCol] === undefined || cells[labelCol] === '') {
        throw new Error(`row ${i + 2}: test rows need an explicit label`)
      }
      const parsed = Number(cells[labelCol])
      if (parsed !== 0 && parsed !== 1) throw new Error(`row ${i + 2}: label must be 0 or 1`)
      label = parsed as 0 | 1
    }
    return { filename, split, label }
  })
}
