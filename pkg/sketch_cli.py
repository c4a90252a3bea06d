#!/usr/bin/env python3
"""
Sketch CLI for heavy distinct hitters
Command-line interface for ingesting streams into Space-Saving Set sketches,
querying and merging sketch files, generating synthetic streams, and
evaluating or benchmarking the sketch variants.
"""

import argparse
import dataclasses
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from tabulate import tabulate

from cardinality import ConfigurationError
from config import COUNTERS, VARIANTS, Config, InvalidRunConfig, RunConfig, parse_topk
from datagen import (
    PRESETS,
    CyclingSpec,
    EntrySource,
    InputError,
    InvalidSpecError,
    OverlapSpec,
    ZipfSpec,
    read_delimited,
    source_for,
    write_delimited,
)
from metrics import COLUMNS, GroundTruth, MetricError, baseline_report, evaluate
from sketch import SketchConfig, SketchFormatError, SpaceSavingSetSketch, capacity_for_budget

logger = logging.getLogger('sketch_cli')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CONFIG = 3

MIB = 1 << 20

GENERATOR_KINDS = {
    'zipf': ZipfSpec,
    'overlap': OverlapSpec,
    'cycling': CyclingSpec,
}

# CLI flag -> spec field, per generator
GENERATOR_FIELDS = {
    ZipfSpec: {'labels': 'n_labels', 'exponent': 'exponent', 'entries': 'n_entries'},
    OverlapSpec: {'universe': 'universe_size', 'common': 'common_size', 'small_sets': 'n_small',
                  'small_size': 'small_set_size', 'heavy_sets': 'n_heavy', 'heavy_size': 'heavy_size'},
    CyclingSpec: {'heavy_sets': 'n_heavy', 'heavy_size': 'heavy_size', 'cycling_labels': 'n_cycling',
                  'entries': 'churn_entries'},
}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def format_label(label):
    return label.decode('utf-8', errors='backslashreplace')


def render(rows, headers, args, text_columns=()):
    """Tab-separated table with a header row, or a grid with --pretty."""
    fmt = 'grid' if getattr(args, 'pretty', False) else 'tsv'
    # labels such as "007" must not be parsed as numbers
    return tabulate(rows, headers=headers, tablefmt=fmt, floatfmt='.6f', disable_numparse=list(text_columns))


def print_stats(sketch, extra=()):
    rows = list(extra) + list(sketch.stats.as_dict().items())
    rows += [('entries_resident', len(sketch)), ('memory_bytes', sketch.memory_bytes())]
    print(tabulate(rows, headers=['stat', 'value'], tablefmt='tsv'))


# ---------- configuration ----------

def run_config(args):
    """Collect and validate the RunConfig for a command."""
    return RunConfig(
        variant=getattr(args, 'variant', Config.VARIANT),
        size=getattr(args, 'size', Config.SIZE),
        registers=getattr(args, 'registers', Config.REGISTERS),
        counter=getattr(args, 'counter', Config.COUNTER),
        seed=getattr(args, 'seed', Config.SEED),
        topk=getattr(args, 'topk', None) or list(Config.TOPK),
        shards=getattr(args, 'shards', 1),
        memory_mib=getattr(args, 'memory', None),
        input_path=getattr(args, 'input', None),
        generator=getattr(args, 'generator', None) or _preset_kind(getattr(args, 'preset', None)),
        out=getattr(args, 'out', None),
    ).validate()


def sketch_config(config, variant=None, registers=None):
    """
    SketchConfig for a run, deriving s from --memory when given.

    Raises:
        InvalidRunConfig: when the memory budget does not fit a single entry
    """
    registers = registers or config.registers
    size = config.size
    if config.memory_mib is not None:
        if config.counter != 'hll':
            raise InvalidRunConfig("A memory budget needs HLL counters")
        size = capacity_for_budget(int(config.memory_mib * MIB), registers)
        if size < 1:
            raise InvalidRunConfig(f"{config.memory_mib} MiB does not fit one counter of r={registers}")
        logger.info(f"{config.memory_mib} MiB budget with r={registers} gives s={size}")
    return SketchConfig.create(variant or config.variant, size, registers, config.counter, config.seed)


def _preset_kind(preset):
    if not preset:
        return None
    return preset.split('-', 1)[0]


def generator_spec(kind, args, seed):
    """Generator spec from a preset (or defaults), with explicit flags layered on top."""
    spec_type = GENERATOR_KINDS[kind]
    preset = getattr(args, 'preset', None)
    base = spec_type()
    if preset:
        base = PRESETS[preset]
        if not isinstance(base, spec_type):
            raise InvalidRunConfig(f"Preset {preset} is not a {kind} preset")
    overrides = {}
    for flag, name in GENERATOR_FIELDS[spec_type].items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return dataclasses.replace(base, seed=seed, **overrides).validate()


def open_source(config, args):
    """
    The run's replayable entry stream: a delimited file or a generator.

    Raises:
        InvalidRunConfig: when neither is given
    """
    if config.generator:
        spec = generator_spec(config.generator, args, config.seed)
        logger.info(f"Generating {spec}")
        return source_for(spec)
    if config.input_path:
        reader = read_delimited(config.input_path, args.delimiter, args.label_col, args.item_col)
        return EntrySource(lambda: iter(reader), None, config.input_path)
    raise InvalidRunConfig("Give an input file or --generator")


def build_sketch(source, sk_config, shards=1):
    """Sketch a stream directly, or as `shards` contiguous segments merged left to right."""
    if shards == 1:
        sketch = SpaceSavingSetSketch(sk_config)
        count = sketch.update(source)
        logger.info(f"Inserted {count:,} entries")
        return sketch
    merged = None
    for part in source.shards(shards):
        sketch = SpaceSavingSetSketch(sk_config)
        sketch.update(part)
        if merged is None:
            merged = sketch
        else:
            merged.merge(sketch)
    logger.info(f"Merged {shards} shard sketches")
    return merged


# ---------- commands ----------

def cmd_ingest(args):
    """Stream entries into a sketch and write it to --out."""
    config = run_config(args)
    if not config.out:
        raise InvalidRunConfig("ingest needs --out")
    source = open_source(config, args)
    sketch = SpaceSavingSetSketch(sketch_config(config))
    count = sketch.update(source)
    sketch.save(config.out)
    logger.info(f"Wrote {config.out}: {len(sketch)} labels, {sketch.memory_bytes():,} bytes")
    print_stats(sketch, [('entries', count)])


def cmd_query(args):
    """Print the top-k labels (or given labels) of a sketch file."""
    sketch = SpaceSavingSetSketch.load(args.sketch)
    if args.label:
        rows = [(label, sketch.query(label.encode('utf-8'))) for label in args.label]
    else:
        rows = [(format_label(label), estimate) for label, estimate in sketch.top(args.k)]
    print(render(rows, ['label', 'estimate'], args, text_columns=[0]))


def cmd_merge(args):
    """Left-fold merge of sketch files, in the order given."""
    if len(args.sketches) > 2:
        logger.info("Merging more than two sketches truncates at every step; input order matters")
    with ThreadPoolExecutor(max_workers=min(8, len(args.sketches))) as pool:
        sketches = list(pool.map(SpaceSavingSetSketch.load, args.sketches))
    merged = sketches[0]
    for other in sketches[1:]:
        merged.merge(other)
    merged.save(args.out)
    print_stats(merged, [('inputs', len(sketches))])


def cmd_eval(args):
    """Ground truth plus sketch over the same stream; one error row per k."""
    config = run_config(args)
    source = open_source(config, args)
    truth = GroundTruth.from_entries(source)
    logger.info(f"Ground truth: {truth.entries:,} entries, {len(truth):,} labels")
    sketch = build_sketch(source, sketch_config(config), config.shards)
    reports = [evaluate(sketch, truth, config.topk, name=config.variant)]
    if args.baseline:
        reports.append(baseline_report(truth, config.topk))
    print_reports(reports, args)


def print_reports(reports, args):
    if args.format == 'jsonl':
        for report in reports:
            print(report.to_json_lines())
        return
    if len(reports) == 1:
        print(reports[0].to_table(pretty=args.pretty))
        return
    rows = [[report.name] + row for report in reports for row in report.table_rows()]
    print(render(rows, ['name'] + COLUMNS, args))


def cmd_compare(args):
    """Evaluate SSS, RSSS and SSSS at one configuration over one stream."""
    config = run_config(args)
    source = open_source(config, args)
    truth = GroundTruth.from_entries(source)
    reports = []
    for variant in VARIANTS:
        sketch = build_sketch(source, sketch_config(config, variant=variant), config.shards)
        reports.append(evaluate(sketch, truth, config.topk, name=variant))
    if args.baseline:
        reports.append(baseline_report(truth, config.topk))
    print_reports(reports, args)


def cmd_sweep(args):
    """Vary r at a fixed memory budget; s follows from the budget."""
    config = run_config(args)
    if config.memory_mib is None:
        raise InvalidRunConfig("sweep needs --memory")
    source = open_source(config, args)
    truth = GroundTruth.from_entries(source)
    rows = []
    for registers in args.register_list:
        probe = dataclasses.replace(config, registers=registers)
        try:
            probe.validate()
            sk_config = sketch_config(probe)
        except InvalidRunConfig as e:
            logger.warning(f"Skipping r={registers}: {e}")
            continue
        sketch = build_sketch(source, sk_config, config.shards)
        report = evaluate(sketch, truth, config.topk, name=f'r={registers}')
        rows.extend([registers, sk_config.size] + row for row in report.table_rows())
    print(render(rows, ['registers', 'size'] + COLUMNS, args))


def cmd_bench(args):
    """Insert throughput, gate effectiveness and query latency."""
    config = run_config(args)
    entries = list(open_source(config, args))
    sketch = SpaceSavingSetSketch(sketch_config(config))
    insert = sketch.insert
    start = time.perf_counter()
    for label, item in entries:
        insert(label, item)
    elapsed = time.perf_counter() - start

    start = time.perf_counter()
    sketch.top(1000)
    top_ms = (time.perf_counter() - start) * 1000.0

    stats = sketch.stats
    rows = [
        ('variant', config.variant),
        ('size', sketch.capacity),
        ('entries', len(entries)),
        ('seconds', round(elapsed, 6)),
        ('entries_per_ms', round(len(entries) / (elapsed * 1000.0), 3) if entries and elapsed > 0 else 0.0),
        ('scan_ratio', round(stats.min_scans / stats.full_misses, 6) if stats.full_misses else 0.0),
        ('top1000_ms', round(top_ms, 3)),
    ]
    print_stats(sketch, rows)


def cmd_gen(args):
    """Materialize a generated stream as a delimited file."""
    seed = args.seed
    if seed < 0 or seed >= 2 ** 64:
        raise InvalidRunConfig(f"Seed must fit in 64 unsigned bits, got {seed}")
    spec = generator_spec(args.kind, args, seed)
    count = write_delimited(source_for(spec), args.out, args.delimiter)
    logger.info(f"Wrote {count:,} entries to {args.out}")
    print(tabulate([('entries', count), ('out', args.out)], headers=['stat', 'value'], tablefmt='tsv'))


# ---------- parser ----------

def _sketch_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--variant', choices=VARIANTS, default=Config.VARIANT, help='Sketch variant')
    parser.add_argument('--size', '-s', type=int, default=Config.SIZE, help='Sketch capacity s')
    parser.add_argument('--registers', '-r', type=int, default=Config.REGISTERS, help='HLL registers per counter')
    parser.add_argument('--counter', choices=COUNTERS, default=Config.COUNTER,
                        help='Count-distinct counter (exact is for testing)')
    parser.add_argument('--seed', type=int, default=Config.SEED, help='Base seed for generators and hashes')
    parser.add_argument('--memory', type=float, help='Memory budget in MiB; derives s')
    return parser


def _generator_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--preset', choices=sorted(PRESETS), help='Generator preset')
    parser.add_argument('--labels', type=int, help='Zipf: number of labels N')
    parser.add_argument('--exponent', type=float, help='Zipf: exponent')
    parser.add_argument('--entries', type=int, help='Zipf: entries; cycling: churn entries')
    parser.add_argument('--universe', type=int, help='Overlap: universe size')
    parser.add_argument('--common', type=int, help='Overlap: common pool size')
    parser.add_argument('--small-sets', type=int, help='Overlap: number of small sets')
    parser.add_argument('--small-size', type=int, help='Overlap: small set size')
    parser.add_argument('--heavy-sets', type=int, help='Overlap/cycling: number of heavy sets')
    parser.add_argument('--heavy-size', type=int, help='Overlap/cycling: heavy set size')
    parser.add_argument('--cycling-labels', type=int, help='Cycling: number of light labels')
    return parser


def _input_options():
    parser = argparse.ArgumentParser(add_help=False, parents=[_generator_options()])
    parser.add_argument('input', nargs='?', help='Delimited input file')
    parser.add_argument('--generator', '-g', choices=sorted(GENERATOR_KINDS), help='Use a generated stream')
    parser.add_argument('--delimiter', '-d', default=Config.DELIMITER, help='Field delimiter')
    parser.add_argument('--label-col', type=int, default=0, help='Zero-based label column')
    parser.add_argument('--item-col', type=int, default=1, help='Zero-based item column')
    return parser


def _report_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--topk', '-k', type=parse_topk, help='Comma-separated k list (default 10,100,1000)')
    parser.add_argument('--shards', type=int, default=1, help='Sketch N contiguous shards and merge them')
    parser.add_argument('--baseline', action='store_true', help='Also report the all-zero estimator')
    parser.add_argument('--format', choices=['table', 'jsonl'], default='table', help='Report format')
    parser.add_argument('--pretty', action='store_true', help='Grid table instead of tab-separated')
    return parser


def build_parser():
    parser = CliParser(
        prog='sketch_cli.py',
        description='Space-Saving Set sketches for heavy distinct hitters',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Sketch a label,item CSV file
  python sketch_cli.py ingest events.csv --out events.sss

  # Ten heaviest labels
  python sketch_cli.py query events.sss -k 10

  # Merge per-day sketches
  python sketch_cli.py merge mon.sss tue.sss --out week.sss

  # Accuracy on the desk-scale Zipf stream, with the all-zero baseline
  python sketch_cli.py eval --preset zipf-desk --topk 10,100 --baseline

  # Same stream split into 10 shards and merged
  python sketch_cli.py eval --preset zipf-desk --shards 10

  # Compare the three variants on the cycling stream with exact counters
  python sketch_cli.py compare --preset cycling-desk --size 200 --counter exact --topk 100

  # Vary counter size at a fixed 8 MiB budget
  python sketch_cli.py sweep --preset zipf-desk --memory 8 --register-list 256,1024,4096

  # Write an overlap stream to disk
  python sketch_cli.py gen overlap --out overlap.csv

  # Throughput and theta gate statistics
  python sketch_cli.py bench --preset zipf-desk
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    subparsers = parser.add_subparsers(dest='command', help='Available commands', parser_class=CliParser)

    sketch_opts = _sketch_options()
    input_opts = _input_options()
    report_opts = _report_options()

    # Ingest
    ingest_parser = subparsers.add_parser('ingest', help='Sketch a stream into a file',
                                          parents=[sketch_opts, input_opts])
    ingest_parser.add_argument('--out', '-o', required=True, help='Sketch file to write')
    ingest_parser.set_defaults(func=cmd_ingest)

    # Query
    query_parser = subparsers.add_parser('query', help='Top-k labels of a sketch file')
    query_parser.add_argument('sketch', help='Sketch file')
    query_parser.add_argument('-k', '--topk', dest='k', type=int, default=10, help='Number of labels')
    query_parser.add_argument('--label', '-l', action='append', help='Query this label instead (repeatable)')
    query_parser.add_argument('--pretty', action='store_true', help='Grid table instead of tab-separated')
    query_parser.set_defaults(func=cmd_query)

    # Merge
    merge_parser = subparsers.add_parser('merge', help='Merge sketch files (left fold)')
    merge_parser.add_argument('sketches', nargs='+', help='Sketch files, merged in this order')
    merge_parser.add_argument('--out', '-o', required=True, help='Merged sketch file')
    merge_parser.set_defaults(func=cmd_merge)

    # Eval
    eval_parser = subparsers.add_parser('eval', help='Error report against exact ground truth',
                                        parents=[sketch_opts, input_opts, report_opts])
    eval_parser.set_defaults(func=cmd_eval)

    # Compare
    compare_parser = subparsers.add_parser('compare', help='Error reports for all three variants',
                                           parents=[sketch_opts, input_opts, report_opts])
    compare_parser.set_defaults(func=cmd_compare)

    # Sweep
    sweep_parser = subparsers.add_parser('sweep', help='Vary r at a fixed memory budget',
                                         parents=[sketch_opts, input_opts, report_opts])
    sweep_parser.add_argument('--register-list', type=parse_topk, default=[256, 1024, 4096],
                              help='Comma-separated register counts')
    sweep_parser.set_defaults(func=cmd_sweep)

    # Bench
    bench_parser = subparsers.add_parser('bench', help='Insert throughput and gate statistics',
                                         parents=[sketch_opts, input_opts])
    bench_parser.set_defaults(func=cmd_bench)

    # Gen
    gen_parser = subparsers.add_parser('gen', help='Write a generated stream to a file',
                                       parents=[_generator_options()])
    gen_parser.add_argument('kind', choices=sorted(GENERATOR_KINDS), help='Generator')
    gen_parser.add_argument('--seed', type=int, default=Config.SEED, help='Generator seed')
    gen_parser.add_argument('--delimiter', '-d', default=Config.DELIMITER, help='Field delimiter')
    gen_parser.add_argument('--out', '-o', required=True, help='Output file')
    gen_parser.set_defaults(func=cmd_gen)

    return parser


def main(argv=None):
    """Main CLI entry point; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=logging.DEBUG if args.verbose else Config.LOG_LEVEL,
        stream=sys.stderr,
    )

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    try:
        args.func(args)
    except KeyboardInterrupt:
        print("\n\nOperation cancelled.", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidRunConfig, InvalidSpecError) as e:
        print(f"✗ Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        print(f"✗ Incompatible configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SketchFormatError, InputError, MetricError) as e:
        print(f"✗ Error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
