import json

import pytest

from metrics import COLUMNS
from sketch import SpaceSavingSetSketch
from sketch_cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_USAGE, main

EXACT = ['--counter', 'exact', '--size', '8']
SMALL_ZIPF = ['-g', 'zipf', '--labels', '50', '--entries', '2000']


def run(capsys, *argv):
    code = main([str(arg) for arg in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def parse_tsv(text):
    """Header plus rows of a tab-separated table, cells stripped."""
    lines = [line for line in text.splitlines() if line.strip()]
    table = [[cell.strip() for cell in line.split('\t')] for line in lines]
    return table[0], table[1:]


def stats_of(text):
    _, rows = parse_tsv(text)
    return {row[0]: row[1] for row in rows}


@pytest.fixture
def csv_file(tmp_path):
    def factory(content, name='in.csv'):
        path = tmp_path / name
        path.write_bytes(content)
        return path
    return factory


@pytest.fixture
def ingested(capsys, csv_file, tmp_path):
    """Sketch file built from a CSV with exact counters."""
    def factory(content, name='in', extra=()):
        out = tmp_path / f'{name}.sss'
        code, _, err = run(capsys, 'ingest', csv_file(content, f'{name}.csv'), '--out', out, *EXACT, *extra)
        assert code == EXIT_OK, err
        return out
    return factory


class TestIngest:
    def test_writes_sketch_and_stats(self, capsys, csv_file, tmp_path):
        out = tmp_path / 'out.sss'
        code, stdout, _ = run(capsys, 'ingest', csv_file(b'a,1\na,2\nb,1\n'), '--out', out, *EXACT)
        assert code == EXIT_OK
        stats = stats_of(stdout)
        assert stats['entries'] == '3'
        assert stats['entries_resident'] == '2'
        sketch = SpaceSavingSetSketch.load(out)
        assert sketch.query(b'a') == 2.0
        assert sketch.query(b'b') == 1.0

    def test_empty_input(self, capsys, csv_file, tmp_path):
        out = tmp_path / 'out.sss'
        code, stdout, _ = run(capsys, 'ingest', csv_file(b''), '--out', out, *EXACT)
        assert code == EXIT_OK
        assert stats_of(stdout)['entries'] == '0'
        assert len(SpaceSavingSetSketch.load(out)) == 0

    def test_deterministic(self, ingested):
        content = b''.join(b'l%d,%d\n' % (i % 13, i) for i in range(500))
        first = ingested(content, 'first', ['--counter', 'hll', '--registers', '64'])
        second = ingested(content, 'second', ['--counter', 'hll', '--registers', '64'])
        assert first.read_bytes() == second.read_bytes()

    def test_generator_input(self, capsys, tmp_path):
        out = tmp_path / 'zipf.sss'
        code, stdout, _ = run(capsys, 'ingest', *SMALL_ZIPF, '--out', out, '--size', '20', '--registers', '64')
        assert code == EXIT_OK
        assert stats_of(stdout)['entries'] == '2000'
        assert len(SpaceSavingSetSketch.load(out)) == 20

    def test_missing_input(self, capsys, tmp_path):
        code, _, _ = run(capsys, 'ingest', tmp_path / 'missing.csv', '--out', tmp_path / 'x.sss')
        assert code == EXIT_IO

    def test_input_without_valid_lines(self, capsys, csv_file, tmp_path):
        code, _, _ = run(capsys, 'ingest', csv_file(b'one\ntwo\n'), '--out', tmp_path / 'x.sss')
        assert code == EXIT_IO

    def test_oversized_label_is_skipped(self, capsys, csv_file, tmp_path):
        out = tmp_path / 'out.sss'
        content = b'x' * 70_000 + b',1\nok,1\n'
        code, stdout, _ = run(capsys, 'ingest', csv_file(content), '--out', out, *EXACT)
        assert code == EXIT_OK
        assert stats_of(stdout)['entries'] == '1'
        assert SpaceSavingSetSketch.load(out).labels() == [b'ok']

    def test_only_oversized_labels(self, capsys, csv_file, tmp_path):
        content = b'x' * 70_000 + b',1\n'
        code, _, _ = run(capsys, 'ingest', csv_file(content), '--out', tmp_path / 'x.sss')
        assert code == EXIT_IO

    def test_memory_budget_needs_hll(self, capsys, csv_file, tmp_path):
        code, _, _ = run(capsys, 'ingest', csv_file(b'a,1\n'), '--out', tmp_path / 'x.sss',
                         '--counter', 'exact', '--memory', '1')
        assert code == EXIT_USAGE


class TestQuery:
    CONTENT = b'a,1\na,2\na,3\nb,1\nb,2\nc,1\n'

    def test_top_k(self, capsys, ingested):
        code, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '-k', 2)
        assert code == EXIT_OK
        header, rows = parse_tsv(stdout)
        assert header == ['label', 'estimate']
        assert [(label, float(v)) for label, v in rows] == [('a', 3.0), ('b', 2.0)]

    def test_topk_alias(self, capsys, ingested):
        _, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '--topk', 1)
        _, rows = parse_tsv(stdout)
        assert [label for label, _ in rows] == ['a']

    def test_zero_k(self, capsys, ingested):
        code, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '-k', 0)
        assert code == EXIT_OK
        _, rows = parse_tsv(stdout)
        assert rows == []

    def test_k_larger_than_sketch(self, capsys, ingested):
        _, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '-k', 100)
        _, rows = parse_tsv(stdout)
        assert [label for label, _ in rows] == ['a', 'b', 'c']

    def test_matches_in_process_top(self, capsys, ingested):
        content = b''.join(b'l%d,%d\n' % (i % 37, i % 101) for i in range(3000))
        path = ingested(content)
        _, stdout, _ = run(capsys, 'query', path, '-k', 10)
        _, rows = parse_tsv(stdout)
        expected = SpaceSavingSetSketch.load(path).top(10)
        assert [label.encode() for label, _ in rows] == [label for label, _ in expected]
        assert [float(v) for _, v in rows] == pytest.approx([v for _, v in expected], abs=1e-6)

    def test_numeric_labels_kept_as_text(self, capsys, ingested):
        _, stdout, _ = run(capsys, 'query', ingested(b'007,1\n007,2\n'), '-k', 1)
        _, rows = parse_tsv(stdout)
        assert rows[0][0] == '007'

    def test_named_labels(self, capsys, ingested):
        _, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '--label', 'b', '--label', 'ghost')
        _, rows = parse_tsv(stdout)
        # absent labels answer with the smallest resident value (c)
        assert [(label, float(v)) for label, v in rows] == [('b', 2.0), ('ghost', 1.0)]

    def test_pretty(self, capsys, ingested):
        _, stdout, _ = run(capsys, 'query', ingested(self.CONTENT), '--pretty')
        assert stdout.lstrip().startswith('+')

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, 'query', tmp_path / 'missing.sss')
        assert code == EXIT_IO

    def test_corrupt_file(self, capsys, tmp_path):
        path = tmp_path / 'bad.sss'
        path.write_bytes(b'not a sketch at all, just text')
        code, _, err = run(capsys, 'query', path)
        assert code == EXIT_IO
        assert 'magic' in err


class TestMerge:
    def test_single_input_is_unchanged(self, capsys, ingested, tmp_path):
        source = ingested(b'a,1\na,2\nb,1\n')
        out = tmp_path / 'merged.sss'
        code, _, _ = run(capsys, 'merge', source, '--out', out)
        assert code == EXIT_OK
        assert out.read_bytes() == source.read_bytes()

    def test_disjoint_union(self, capsys, ingested, tmp_path):
        left = ingested(b'a,1\na,2\nb,1\n', 'left')
        right = ingested(b'c,1\nc,2\nc,3\nd,1\n', 'right')
        out = tmp_path / 'merged.sss'
        code, stdout, _ = run(capsys, 'merge', left, right, '--out', out)
        assert code == EXIT_OK
        assert stats_of(stdout)['inputs'] == '2'
        merged = SpaceSavingSetSketch.load(out)
        assert merged.top(4) == [(b'c', 3.0), (b'a', 2.0), (b'b', 1.0), (b'd', 1.0)]

    def test_incompatible_sizes(self, capsys, ingested, tmp_path):
        small = ingested(b'a,1\n', 'small')
        large = ingested(b'b,1\n', 'large', ['--size', '16'])
        code, _, err = run(capsys, 'merge', small, large, '--out', tmp_path / 'merged.sss')
        assert code == EXIT_CONFIG
        assert 'Incompatible' in err


class TestEval:
    def test_large_exact_sketch_has_zero_error(self, capsys):
        code, stdout, _ = run(capsys, 'eval', *SMALL_ZIPF, '--size', '100', '--counter', 'exact',
                              '--topk', '10,20')
        assert code == EXIT_OK
        header, rows = parse_tsv(stdout)
        assert header == COLUMNS
        assert [int(row[0]) for row in rows] == [10, 20]
        q = header.index('q')
        assert all(float(row[q]) == 0.0 for row in rows)

    def test_under_full_sketch_reports_its_size(self, capsys, csv_file):
        content = b''.join(b'l%d,%d\n' % (i, j) for i in range(5) for j in range(i + 1))
        _, stdout, _ = run(capsys, 'eval', csv_file(content), *EXACT, '--topk', '10')
        header, rows = parse_tsv(stdout)
        assert rows[0][header.index('s_k_size')] == '5'

    def test_json_lines(self, capsys):
        code, stdout, _ = run(capsys, 'eval', *SMALL_ZIPF, '--size', '20', '--registers', '64',
                              '--topk', '5,10', '--format', 'jsonl')
        assert code == EXIT_OK
        records = [json.loads(line) for line in stdout.splitlines() if line.strip()]
        assert [r['k'] for r in records] == [5, 10]
        assert all(r['name'] == 'ssss' for r in records)

    def test_baseline(self, capsys):
        _, stdout, _ = run(capsys, 'eval', *SMALL_ZIPF, '--size', '20', '--counter', 'exact',
                           '--topk', '5', '--baseline')
        header, rows = parse_tsv(stdout)
        assert header == ['name'] + COLUMNS
        assert [row[0] for row in rows] == ['ssss', 'all-zero']
        assert float(rows[1][header.index('nae_t')]) == pytest.approx(1.0)

    def test_shards(self, capsys):
        code, stdout, _ = run(capsys, 'eval', *SMALL_ZIPF, '--size', '100', '--counter', 'exact',
                              '--topk', '10', '--shards', '4')
        assert code == EXIT_OK
        header, rows = parse_tsv(stdout)
        assert float(rows[0][header.index('q')]) == 0.0

    def test_input_and_generator_together(self, capsys, csv_file):
        code, _, _ = run(capsys, 'eval', csv_file(b'a,1\n'), *SMALL_ZIPF)
        assert code == EXIT_USAGE

    def test_no_input(self, capsys):
        code, _, _ = run(capsys, 'eval')
        assert code == EXIT_USAGE


class TestCompareAndSweep:
    def test_compare_reports_every_variant(self, capsys):
        code, stdout, _ = run(capsys, 'compare', *SMALL_ZIPF, '--size', '20', '--counter', 'exact',
                              '--topk', '5')
        assert code == EXIT_OK
        _, rows = parse_tsv(stdout)
        assert [row[0] for row in rows] == ['sss', 'rsss', 'ssss']

    def test_sweep_derives_size_from_budget(self, capsys):
        code, stdout, _ = run(capsys, 'sweep', *SMALL_ZIPF, '--memory', '0.01', '--register-list', '64,256',
                              '--topk', '5')
        assert code == EXIT_OK
        header, rows = parse_tsv(stdout)
        assert header[:2] == ['registers', 'size']
        assert [(row[0], row[1]) for row in rows] == [('64', '113'), ('256', '44')]

    def test_sweep_needs_memory(self, capsys):
        code, _, _ = run(capsys, 'sweep', *SMALL_ZIPF)
        assert code == EXIT_USAGE


class TestBench:
    def test_empty_stream(self, capsys, csv_file):
        code, stdout, _ = run(capsys, 'bench', csv_file(b''), *EXACT)
        assert code == EXIT_OK
        stats = stats_of(stdout)
        assert stats['entries'] == '0'
        assert float(stats['entries_per_ms']) == 0.0

    def test_counts_are_deterministic(self, capsys):
        argv = ('bench', *SMALL_ZIPF, '--size', '10', '--registers', '64')
        first = stats_of(run(capsys, *argv)[1])
        second = stats_of(run(capsys, *argv)[1])
        for name in ('inserts', 'full_misses', 'gate_rejections', 'scan_rejections', 'min_scans', 'evictions'):
            assert first[name] == second[name]
        assert first['inserts'] == '2000'


class TestGen:
    def test_writes_lines(self, capsys, tmp_path):
        out = tmp_path / 'zipf.csv'
        code, stdout, _ = run(capsys, 'gen', 'zipf', '--labels', '10', '--entries', '100', '--out', out)
        assert code == EXIT_OK
        assert stats_of(stdout)['entries'] == '100'
        assert len(out.read_bytes().splitlines()) == 100

    def test_preset_of_another_kind(self, capsys, tmp_path):
        code, _, _ = run(capsys, 'gen', 'zipf', '--preset', 'overlap-desk', '--out', tmp_path / 'x.csv')
        assert code == EXIT_USAGE

    def test_invalid_spec(self, capsys, tmp_path):
        code, _, _ = run(capsys, 'gen', 'overlap', '--common', '10', '--small-size', '20',
                         '--out', tmp_path / 'x.csv')
        assert code == EXIT_USAGE


class TestUsage:
    @pytest.mark.parametrize('argv', [
        [],
        ['query'],
        ['bogus'],
        ['ingest', 'in.csv'],
        ['eval', '-g', 'zipf', '--topk', '0'],
        ['eval', '-g', 'zipf', '--topk', 'x,y'],
        ['eval', '-g', 'zipf', '--registers', '1000'],
        ['eval', '-g', 'zipf', '--size', '0'],
        ['eval', '-g', 'zipf', '--variant', 'nope'],
        ['eval', '-g', 'zipf', '--seed', '-1'],
    ])
    def test_usage_errors(self, capsys, argv):
        code, _, _ = run(capsys, *argv)
        assert code == EXIT_USAGE
