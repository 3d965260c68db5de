import numpy as np
import pytest

from brat_io import (parse_document, serialize_document, read_document, write_document, read_dataset,
                     validate_dataset, document_violations, tokenize)
from errors import (MalformedLine, DanglingReference, OffsetOutOfBounds, SurfaceMismatch, TokenMisalignment,
                    EncodingError, IoError)
from schema import builtin_schema

TEXT = 'John Smith works at Acme Corp .\nHe lives in Paris .\n'
ANN = ('T1\tPER 0 10\tJohn Smith\n'
       'T2\tORG 20 29\tAcme Corp\n'
       'T3\tLOC 44 49\tParis\n')


def test_parse_spans_and_tokens():
    doc = parse_document(TEXT, ANN, 'd1')
    assert len(doc.sentences) == 2
    assert doc.tokens[:3] == ['John', 'Smith', 'works']
    first = doc.span('T1')
    assert (first.token_begin, first.token_end) == (0, 1)
    assert doc.span('T3').token_begin == 10


def test_relation_may_precede_its_spans():
    ann = 'R1\tWork_For Arg1:T1 Arg2:T2\n' + ANN
    doc = parse_document(TEXT, ann)
    assert doc.relations[0].head_span_id == 'T1'


def test_comments_and_blank_lines_are_skipped():
    doc = parse_document(TEXT, '# note\n\n' + ANN)
    assert len(doc.spans) == 3


def test_dangling_reference():
    with pytest.raises(DanglingReference) as e:
        parse_document(TEXT, ANN + 'R1\tX Arg1:T1 Arg2:T9\n')
    assert e.value.span_id == 'T9'


def test_malformed_line_reports_number():
    with pytest.raises(MalformedLine) as e:
        parse_document(TEXT, ANN + 'garbage here\n')
    assert e.value.line_no == 4


def test_duplicate_id_is_malformed():
    with pytest.raises(MalformedLine):
        parse_document(TEXT, ANN + 'T1\tPER 0 4\tJohn\n')


def test_offset_out_of_bounds():
    with pytest.raises(OffsetOutOfBounds):
        parse_document(TEXT, 'T1\tPER 40 400\tx\n')


def test_surface_mismatch():
    with pytest.raises(SurfaceMismatch):
        parse_document(TEXT, 'T1\tPER 0 4\tJane\n')


def test_token_misalignment():
    with pytest.raises(TokenMisalignment):
        parse_document(TEXT, 'T1\tPER 0 3\tJoh\n')


def test_invalid_utf8():
    with pytest.raises(EncodingError):
        parse_document(b'caf\xe9 au lait\n', b'')


def test_error_message_starts_with_class_name():
    try:
        parse_document(TEXT, 'T1\tPER 0 4\tJane\n')
    except SurfaceMismatch as e:
        assert str(e).startswith('SurfaceMismatch ')


def test_serialize_orders_and_renumbers():
    ann = 'T7\tLOC 44 49\tParis\nT3\tPER 0 10\tJohn Smith\nR5\tX Arg1:T3 Arg2:T7\n'
    _, out = serialize_document(parse_document(TEXT, ann))
    assert out == 'T1\tPER 0 10\tJohn Smith\nT2\tLOC 44 49\tParis\nR1\tX Arg1:T1 Arg2:T2\n'


def test_empty_annotation_serializes_empty():
    assert serialize_document(parse_document(TEXT, ''))[1] == ''


def _random_document(rng, doc_id):
    words = ['alpha', 'beta', 'Gamma', 'delta', 'Eps', 'zeta']
    lines = [' '.join(rng.choice(words, size=int(rng.integers(1, 7)))) for _ in range(int(rng.integers(1, 4)))]
    text = '\n'.join(lines) + '\n'
    offsets = [t for s in tokenize(text) for t in s]
    ann, ids = [], []
    for i in range(int(rng.integers(0, 5))):
        b = int(rng.integers(0, len(offsets)))
        e = min(len(offsets) - 1, b + int(rng.integers(0, 2)))
        cb, ce = offsets[b][0], offsets[e][1]
        ann.append(f"T{i + 1}\tL{int(rng.integers(0, 3))} {cb} {ce}\t{text[cb:ce]}".replace('\n', ' '))
        ids.append(f"T{i + 1}")
    for i in range(int(rng.integers(0, 3)) if len(ids) > 1 else 0):
        h, t = rng.choice(len(ids), size=2, replace=False)
        ann.append(f"R{i + 1}\tR{int(rng.integers(0, 2))} Arg1:{ids[h]} Arg2:{ids[t]}")
    return parse_document(text, '\n'.join(ann) + '\n', doc_id)


def test_round_trip_random_documents():
    rng = np.random.default_rng(7)
    for k in range(1000):
        doc = _random_document(rng, f"r{k}")
        txt, ann = serialize_document(doc)
        again = parse_document(txt, ann, doc.doc_id)
        assert again.canonical() == doc.canonical()


@pytest.mark.parametrize('brk', ['\u2028', '\u2029', '\x85', '\x0c', '\x0b', '\x1c', '\x1d', '\x1e', '\r'])
def test_line_separators_inside_spans_round_trip(tmp_path, brk):
    text = f'foo{brk}bar baz\n'
    doc = parse_document(text, f'T1\tX 0 7\tfoo{brk}bar\nT2\tX 8 11\tbaz\n', 'sep')
    _, ann = serialize_document(doc)
    assert ann.count('\n') == 2
    assert parse_document(text, ann, 'sep').canonical() == doc.canonical()
    again = read_document(write_document(doc, tmp_path))
    assert again.canonical() == doc.canonical()


def test_write_and_read_with_token_sidecar(tmp_path):
    text = 'New-York is big\n'
    doc = parse_document(text, 'T1\tLOC 0 8\tNew-York\n', 'tok', tok_content='0-3 3-4 4-8 9-11 12-15\n')
    path = write_document(doc, tmp_path)
    assert (tmp_path / 'tok.tok').exists()
    again = read_document(path)
    assert again.canonical() == doc.canonical()
    assert again.tokens[:3] == ['New', '-', 'York']


def test_read_missing_file():
    with pytest.raises(IoError):
        read_document('/nonexistent/x.txt')


def test_read_dataset_sorted(tmp_path):
    for name in ('b', 'a'):
        (tmp_path / f"{name}.txt").write_text('one two\n', encoding='utf-8')
    docs = read_dataset(tmp_path)
    assert [d.doc_id for d in docs] == ['a', 'b']


def test_validate_clean_directory(tmp_path):
    write_document(parse_document(TEXT, ANN, 'clean'), tmp_path)
    assert validate_dataset(tmp_path, builtin_schema('NER')) == []


def test_validate_reports_unknown_label_and_overlap():
    doc = parse_document(TEXT, 'T1\tPER 0 10\tJohn Smith\nT2\tWHO 5 10\tSmith\n', 'bad')
    kinds = {v.kind for v in document_violations(doc, builtin_schema('NER'))}
    assert kinds == {'UnknownSpanLabel', 'OverlappingSpans'}


def test_validate_dependency_parents_and_cycles():
    text = 'a b c\n'
    ann = ('T1\tword 0 1\ta\nT2\tword 2 3\tb\nT3\tword 4 5\tc\n'
           'R1\tnsubj Arg1:T1 Arg2:T2\nR2\tobj Arg1:T3 Arg2:T2\nR3\tobj Arg1:T2 Arg2:T1\n')
    kinds = [v.kind for v in document_violations(parse_document(text, ann, 'dep'), builtin_schema('Dep'))]
    assert 'MultipleParents' in kinds
    assert 'Cycle' in kinds


def test_validate_relation_across_sentences():
    ann = 'T1\tPER 0 10\tJohn Smith\nT2\tLOC 44 49\tParis\nR1\tholder Arg1:T1 Arg2:T2\n'
    doc = parse_document(TEXT, ann.replace('PER', 'holder').replace('LOC', 'target'), 'orl')
    kinds = {v.kind for v in document_violations(doc, builtin_schema('ORL'))}
    assert 'RelationCrossesSentence' in kinds


def test_unreadable_file_becomes_parse_error(tmp_path):
    (tmp_path / 'x.txt').write_text('a b\n', encoding='utf-8')
    (tmp_path / 'x.ann').write_text('nonsense\n', encoding='utf-8')
    violations = validate_dataset(tmp_path, builtin_schema('NER'))
    assert [v.kind for v in violations] == ['ParseError']


if __name__ == '__main__':
    test_round_trip_random_documents()
    print('brat round trip OK')
