#!/usr/bin/env node
/**
 * wsad-extract: image directory + label CSV -> WSFX feature maps + manifest.
 *
 *   wsad-extract --images DIR --labels labels.csv --out DIR
 *                [--preset densenet121|densenet-mini] [--input-size N]
 *                [--block 1..4] [--seed N] [--weights model.json]
 */

import { PRESETS } from './model'
import { extract } from './extract'

interface CliOptions {
  images?: string
  labels?: string
  out?: string
  preset: string
  inputSize?: number
  block?: number
  seed: number
  weights?: string
}

function usage(): string {
  return (
    'usage: wsad-extract --images DIR --labels CSV --out DIR\n' +
    `       [--preset ${Object.keys(PRESETS).join('|')}] [--input-size N]\n` +
    '       [--block N] [--seed N] [--weights model.json]\n'
  )
}

export function parseArgs(argv: string[]): CliOptions {
  const options: CliOptions = { preset: 'densenet121', seed: 0 }
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    const next = () => {
      const value = argv[++i]
      if (value === undefined) throw new Error(`flag ${flag} needs a value`)
      return value
    }
    switch (flag) {
      case '--images':
        options.images = next()
        break
      case '--labels':
        options.labels = next()
        break
      case '--out':
        options.out = next()
        break
      case '--preset':
        options.preset = next()
        break
      case '--input-size':
        options.inputSize = Number(next())
        break
      case '--block':
        options.block = Number(next())
        break
      case '--seed':
        options.seed = Number(next())
        break
      case '--weights':
        options.weights = next()
        break
      case '--help':
      case '-h':
        process.stdout.write(usage())
        process.exit(0)
        break
      default:
        throw new Error(`unknown flag ${flag}\n${usage()}`)
    }
  }
  if (!options.images || !options.labels || !options.out) {
    throw new Error(`--images, --labels and --out are required\n${usage()}`)
  }
  return options
}

async function main(): Promise<number> {
  let options: CliOptions
  try {
    options = parseArgs(process.argv.slice(2))
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 2
  }
  try {
    const result = await extract({
      imageDir: options.images!,
      labelsCsv: options.labels!,
      outDir: options.out!,
      preset: options.preset,
      inputSize: options.inputSize,
      block: options.block,
      seed: options.seed,
      weightsPath: options.weights,
    })
    const [h, w, c] = result.outputShape
    process.stdout.write(
      `extracted ${result.entries.length} images (${h}x${w}x${c} activations)` +
        (result.skipped.length ? `, skipped ${result.skipped.length}` : '') +
        ` -> ${result.manifestPath}\n`,
    )
    return 0
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 1
  }
}

if (require.main === module) {
  main().then((code) => {
    process.exitCode = code
  })
}
