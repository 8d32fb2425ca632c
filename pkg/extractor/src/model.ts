/**
 * Densely connected CNN backbone with selectable block endpoints.
 *
 * The full preset mirrors the DenseNet121 layout (growth 32, blocks
 * 6/12/24/16, stem width 64); the mini preset keeps the same topology at a
 * fraction of the size for fast tests and smoke runs. Weights are drawn
 * from seeded initializers, so two builds with the same seed produce
 * identical networks; ImageNet-trained weights can be substituted via a
 * tfjs LayersModel (see loadExternalModel) when a weights file is
 * available.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export interface BackbonePreset {
  name: string
  growthRate: number
  blockLayers: number[]
  stemChannels: number
  defaultInputSize: number
}

export const PRESETS: Record<string, BackbonePreset> = {
  densenet121: {
    name: 'densenet121',
    growthRate: 32,
    blockLayers: [6, 12, 24, 16],
    stemChannels: 64,
    defaultInputSize: 224,
  },
  'densenet-mini': {
    name: 'densenet-mini',
    growthRate: 8,
    blockLayers: [2, 2, 2, 2],
    stemChannels: 16,
    defaultInputSize: 64,
  },
}

export interface FeatureModel {
  model: tf.LayersModel
  inputSize: number
  /** [height, width, channels] of the endpoint activation */
  outputShape: [number, number, number]
}

export function buildBackbone(
  preset: BackbonePreset,
  inputSize: number,
  block: number,
  seed: number,
): FeatureModel {
  if (block < 1 || block > preset.blockLayers.length) {
    throw new Error(`block must be 1..${preset.blockLayers.length}, got ${block}`)
  }
  // tfjs treats seed 0 as "unseeded", so the per-layer stream starts at 1
  let layerCounter = 0
  const nextSeed = () => seed * 10_000 + ++layerCounter

  const conv = (x: tf.SymbolicTensor, filters: number, kernel: number, stride: number) =>
    tf.layers
      .conv2d({
        filters,
        kernelSize: kernel,
        strides: stride,
        padding: 'same',
        useBias: false,
        kernelInitializer: tf.initializers.heNormal({ seed: nextSeed() }),
      })
      .apply(x) as tf.SymbolicTensor

  const bnRelu = (x: tf.SymbolicTensor) => {
    const bn = tf.layers.batchNormalization({ epsilon: 1.001e-5 }).apply(x)
    return tf.layers.reLU().apply(bn) as tf.SymbolicTensor
  }

  const input = tf.input({ shape: [inputSize, inputSize, 3] })
  let x = conv(input, preset.stemChannels, 7, 2)
  x = bnRelu(x)
  x = tf.layers
    .maxPooling2d({ poolSize: 3, strides: 2, padding: 'same' })
    .apply(x) as tf.SymbolicTensor

  let endpoint: tf.SymbolicTensor | null = null
  for (let b = 0; b < preset.blockLayers.length; b++) {
    for (let l = 0; l < preset.blockLayers[b]; l++) {
      // bottleneck: BN-ReLU-1x1 conv (4g) then BN-ReLU-3x3 conv (g), concat
      let y = bnRelu(x)
      y = conv(y, 4 * preset.growthRate, 1, 1)
      y = bnRelu(y)
      y = conv(y, preset.growthRate, 3, 1)
      x = tf.layers.concatenate().apply([x, y]) as tf.SymbolicTensor
    }
    if (b + 1 === block) {
      endpoint = x
      break
    }
    // transition: halve channels, halve resolution
    const channels = x.shape[x.shape.length - 1] as number
    let t = bnRelu(x)
    t = conv(t, Math.floor(channels / 2), 1, 1)
    x = tf.layers
      .averagePooling2d({ poolSize: 2, strides: 2, padding: 'same' })
      .apply(t) as tf.SymbolicTensor
  }

  const model = tf.model({ inputs: input, outputs: endpoint! })
  const [, h, w, c] = model.outputs[0].shape
  return {
    model,
    inputSize,
    outputShape: [h as number, w as number, c as number],
  }
}

/**
 * Load a tfjs LayersModel from a local model.json (graph weights beside it).
 * Pure-JS tfjs has no filesystem IO handler in Node, so a minimal one is
 * provided here.
 */
export async function loadExternalModel(modelJsonPath: string): Promise<FeatureModel> {
  const dir = path.dirname(modelJsonPath)
  const spec = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'))
  const handler: tf.io.IOHandler = {
    load: async () => {
      const manifest = spec.weightsManifest as Array<{
        paths: string[]
        weights: tf.io.WeightsManifestEntry[]
      }>
      const buffers: Buffer[] = []
      const weightSpecs: tf.io.WeightsManifestEntry[] = []
      for (const group of manifest) {
        for (const p of group.paths) buffers.push(fs.readFileSync(path.join(dir, p)))
        weightSpecs.push(...group.weights)
      }
      const weightData = Buffer.concat(buffers)
      return {
        modelTopology: spec.modelTopology,
        format: spec.format,
        generatedBy: spec.generatedBy,
        convertedBy: spec.convertedBy,
        weightSpecs,
        weightData: weightData.buffer.slice(
          weightData.byteOffset,
          weightData.byteOffset + weightData.byteLength,
        ),
      }
    },
  }
  const model = await tf.loadLayersModel(handler)
  const inShape = model.inputs[0].shape
  const outShape = model.outputs[0].shape
  if (inShape.length !== 4 || outShape.length !== 4) {
    throw new Error('external model must map an image batch to a spatial activation')
  }
  return {
    model,
    inputSize: inShape[1] as number,
    outputShape: [outShape[1] as number, outShape[2] as number, outShape[3] as number],
  }
}

/** Run one preprocessed (size*size*3) image through the model. */
export function activations(fm: FeatureModel, pixels: Float32Array): Float32Array {
  const result = tf.tidy(() => {
    const input = tf.tensor4d(pixels, [1, fm.inputSize, fm.inputSize, 3])
    return fm.model.predict(input) as tf.Tensor
  })
  const data = result.dataSync() as Float32Array
  result.dispose()
  return Float32Array.from(data)
}
