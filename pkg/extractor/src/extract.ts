/**
 * Extraction pipeline: an image directory plus a label CSV become one WSFX
 * feature file per image and a JSON-lines manifest the detector package
 * consumes directly.
 *
 * The label CSV has a header with columns `filename,split[,label]`; splits
 * are train-normal / train-anomaly / test, and test rows carry an explicit
 * 0/1 label. Unreadable images are skipped with a warning and excluded from
 * the manifest; a model load failure is fatal.
 */

import * as fs from 'fs'
import * as path from 'path'

import { loadImage, preprocess } from './images'
import { LabelRow, ManifestEntry, encodeManifest, parseLabelCsv } from './manifest'
import { BackbonePreset, FeatureModel, PRESETS, activations, buildBackbone, loadExternalModel } from './model'
import { encodeWsfx } from './wsfx'

export interface ExtractConfig {
  imageDir: string
  labelsCsv: string
  outDir: string
  preset?: string
  inputSize?: number
  /** dense block whose output is exported (1-based; default: the last) */
  block?: number
  seed?: number
  /** optional path to a tfjs model.json replacing the seeded backbone */
  weightsPath?: string
  log?: (message: string) => void
}

export interface ExtractResult {
  entries: ManifestEntry[]
  skipped: string[]
  outputShape: [number, number, number]
  manifestPath: string
}

export async function prepareModel(config: ExtractConfig): Promise<FeatureModel> {
  if (config.weightsPath) {
    return loadExternalModel(config.weightsPath)
  }
  const preset: BackbonePreset | undefined = PRESETS[config.preset ?? 'densenet121']
  if (!preset) {
    throw new Error(
      `unknown preset '${config.preset}'; available: ${Object.keys(PRESETS).join(', ')}`,
    )
  }
  const inputSize = config.inputSize ?? preset.defaultInputSize
  const block = config.block ?? preset.blockLayers.length
  return buildBackbone(preset, inputSize, block, config.seed ?? 0)
}

export async function extract(config: ExtractConfig): Promise<ExtractResult> {
  const log = config.log ?? ((message: string) => console.warn(message))
  const rows: LabelRow[] = parseLabelCsv(fs.readFileSync(config.labelsCsv, 'utf-8'))
  const model = await prepareModel(config) // load failure propagates (fatal)

  const featuresDir = path.join(config.outDir, 'features')
  fs.mkdirSync(featuresDir, { recursive: true })

  const entries: ManifestEntry[] = []
  const skipped: string[] = []
  const [h, w, c] = model.outputShape

  for (const row of rows) {
    const imagePath = path.join(config.imageDir, row.filename)
    let pixels: Float32Array
    try {
      pixels = preprocess(loadImage(imagePath), model.inputSize)
    } catch (err) {
      log(`skipping unreadable image ${imagePath}: ${(err as Error).message}`)
      skipped.push(row.filename)
      continue
    }
    const data = activations(model, pixels)
    const id = path.basename(row.filename, path.extname(row.filename))
    const featureRel = path.join('features', `${id}.wsfx`)
    fs.writeFileSync(
      path.join(config.outDir, featureRel),
      encodeWsfx({ height: h, width: w, channels: c, data }),
    )
    entries.push({
      id,
      split: row.split,
      label: row.label,
      feature_path: featureRel,
      mask_path: null,
    })
  }

  const manifestPath = path.join(config.outDir, 'manifest.jsonl')
  fs.writeFileSync(manifestPath, encodeManifest(entries))
  return { entries, skipped, outputShape: model.outputShape, manifestPath }
}
