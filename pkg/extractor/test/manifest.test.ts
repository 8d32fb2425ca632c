import { describe, expect, it } from 'vitest'

import { encodeManifest, parseLabelCsv } from '../src/manifest'

describe('label csv parsing', () => {
  it('derives training labels from the split', () => {
    const rows = parseLabelCsv(
      'filename,split,label\na.png,train-normal,\nb.png,train-anomaly,\nc.png,test,1\nd.png,test,0\n',
    )
    expect(rows.map((r) => r.label)).toEqual([0, 1, 1, 0])
    expect(rows[0].filename).toBe('a.png')
  })

  it('accepts any column order', () => {
    const rows = parseLabelCsv('label,filename,split\n,x.png,train-normal\n')
    expect(rows[0]).toEqual({ filename: 'x.png', split: 'train-normal', label: 0 })
  })

  it('rejects missing columns, bad splits and unlabeled test rows', () => {
    expect(() => parseLabelCsv('filename\nx.png\n')).toThrow(/columns/)
    expect(() => parseLabelCsv('filename,split\nx.png,validation\n')).toThrow(/split/)
    expect(() => parseLabelCsv('filename,split\nx.png,test\n')).toThrow(/label/)
  })
})

describe('manifest encoding', () => {
  it('writes one json object per line with the full schema', () => {
    const text = encodeManifest([
      { id: 'a', split: 'train-normal', label: 0, feature_path: 'features/a.wsfx', mask_path: null },
      { id: 'b', split: 'test', label: 1, feature_path: 'features/b.wsfx', mask_path: null },
    ])
    const lines = text.trim().split('\n')
    expect(lines).toHaveLength(2)
    const obj = JSON.parse(lines[0])
    expect(Object.keys(obj).sort()).toEqual(['feature_path', 'id', 'label', 'mask_path', 'split'])
    expect(obj.split).toBe('train-normal')
  })

  it('enforces split/label consistency', () => {
    expect(() =>
      encodeManifest([
        { id: 'a', split: 'train-normal', label: 1, feature_path: 'f', mask_path: null },
      ]),
    ).toThrow(/label 0/)
    expect(() =>
      encodeManifest([
        { id: 'a', split: 'train-anomaly', label: 0, feature_path: 'f', mask_path: null },
      ]),
    ).toThrow(/label 1/)
  })
})
