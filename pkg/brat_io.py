"""Read, write and validate documents in the BRAT standoff format.

A document is `<name>.txt` (one whitespace-tokenized sentence per line) plus
`<name>.ann` with T (span) and R (relation) lines. An optional `<name>.tok`
sidecar overrides tokenization: one line per sentence, tokens as `begin-end`.
"""
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from errors import (
    MalformedLine, DanglingReference, OffsetOutOfBounds, SurfaceMismatch,
    TokenMisalignment, EncodingError, IoError, BratError,
)
from helpers import log, debug, worker_count, paired_files, ensure_dir
from models import Document, SpanAnnotation, RelationAnnotation, Violation

SPAN_LINE = re.compile(r'^(T\d+)\t(\S+) (\d+) (\d+)\t(.*)$')
RELATION_LINE = re.compile(r'^(R\d+)\t(\S+) Arg1:(T\d+) Arg2:(T\d+)\s*$')
TOKEN = re.compile(r'\S+')
TOK_ENTRY = re.compile(r'^(\d+)-(\d+)$')


def _decode(content, what):
    if content is None:
        return ''
    if isinstance(content, (bytes, bytearray)):
        try:
            return bytes(content).decode('utf-8')
        except UnicodeDecodeError as e:
            raise EncodingError(f"{what} is not valid UTF-8 (byte {e.start})") from None
    return content


def tokenize(text):
    """Whitespace tokens per line; blank lines produce no sentence."""
    sentences = []
    offset = 0
    for line in text.split('\n'):
        tokens = tuple((offset + m.start(), offset + m.end()) for m in TOKEN.finditer(line))
        if tokens:
            sentences.append(tokens)
        offset += len(line) + 1
    return tuple(sentences)


def parse_tokens(tok_content, text):
    sentences = []
    for line_no, line in enumerate(tok_content.split('\n'), start=1):
        if not line.strip():
            continue
        tokens = []
        last_end = -1
        for entry in line.split():
            m = TOK_ENTRY.match(entry)
            if not m:
                raise MalformedLine(line_no, line)
            b, e = int(m.group(1)), int(m.group(2))
            if b >= e or b < last_end or e > len(text):
                raise MalformedLine(line_no, line)
            tokens.append((b, e))
            last_end = e
        sentences.append(tuple(tokens))
    return tuple(sentences)


# every separator str.splitlines() breaks on, plus tab
SURFACE_BREAKS = str.maketrans({c: ' ' for c in '\t\n\r\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029'})


def _surface(text):
    return text.translate(SURFACE_BREAKS)


def parse_document(txt_content, ann_content, doc_id='', tok_content=None):
    """Parse one .txt/.ann pair into a Document. Accepts str or raw bytes."""
    text = _decode(txt_content, 'text')
    ann = _decode(ann_content, 'annotation')
    sentences = parse_tokens(_decode(tok_content, 'tokens'), text) if tok_content else tokenize(text)

    # 1. token boundary lookup tables
    starts, ends = {}, {}
    for i, (b, e) in enumerate(t for sentence in sentences for t in sentence):
        starts[b] = i
        ends[e] = i

    spans, relations = [], []
    seen_ids = set()
    pending = []
    for line_no, raw in enumerate(ann.split('\n'), start=1):
        line = raw.rstrip('\r')
        if not line.strip() or line.startswith('#'):
            continue
        m = SPAN_LINE.match(line)
        if m:
            span_id, label, b, e, surface = m.group(1), m.group(2), int(m.group(3)), int(m.group(4)), m.group(5)
            if span_id in seen_ids:
                raise MalformedLine(line_no, line)
            seen_ids.add(span_id)
            if b >= e or e > len(text):
                raise OffsetOutOfBounds(span_id, b, e, len(text))
            expected = _surface(text[b:e])
            if expected != _surface(surface):
                raise SurfaceMismatch(span_id, expected, surface)
            if b not in starts or e not in ends or starts[b] > ends[e]:
                raise TokenMisalignment(span_id, b, e)
            spans.append(SpanAnnotation(span_id, label, b, e, starts[b], ends[e], text[b:e]))
            continue
        m = RELATION_LINE.match(line)
        if m:
            rel_id, label, head, tail = m.groups()
            if rel_id in seen_ids or head == tail:
                raise MalformedLine(line_no, line)
            seen_ids.add(rel_id)
            pending.append(RelationAnnotation(rel_id, label, head, tail))
            continue
        raise MalformedLine(line_no, line)

    # 2. relations may precede their spans in the file, so resolve last
    span_ids = {s.span_id for s in spans}
    for rel in pending:
        for ref in (rel.head_span_id, rel.tail_span_id):
            if ref not in span_ids:
                raise DanglingReference(rel.rel_id, ref)
        relations.append(rel)

    return Document(doc_id=doc_id, text=text, sentences=sentences,
                    spans=tuple(spans), relations=tuple(relations))


def _id_number(ann_id):
    digits = ann_id[1:]
    return int(digits) if digits.isdigit() else 0


def serialize_document(doc):
    """Return (txt, ann). Spans sorted by (char_begin, char_end, label); ids renumbered from 1."""
    ordered = sorted(doc.spans, key=lambda s: (s.char_begin, s.char_end, s.label))
    new_ids = {}
    lines = []
    for i, span in enumerate(ordered, start=1):
        new_ids[span.span_id] = f"T{i}"
        lines.append(f"T{i}\t{span.label} {span.char_begin} {span.char_end}\t{_surface(doc.text[span.char_begin:span.char_end])}")
    for i, rel in enumerate(sorted(doc.relations, key=lambda r: (_id_number(r.rel_id), r.rel_id)), start=1):
        lines.append(f"R{i}\t{rel.label} Arg1:{new_ids[rel.head_span_id]} Arg2:{new_ids[rel.tail_span_id]}")
    ann = '\n'.join(lines) + '\n' if lines else ''
    return doc.text, ann


def serialize_tokens(doc):
    return ''.join(' '.join(f"{b}-{e}" for b, e in sentence) + '\n' for sentence in doc.sentences)


def read_document(txt_path):
    """Load <name>.txt with its .ann (missing = empty) and optional .tok sidecar."""
    txt_path = Path(txt_path)
    try:
        txt = txt_path.read_bytes()
        ann_path = txt_path.with_suffix('.ann')
        ann = ann_path.read_bytes() if ann_path.exists() else b''
        tok_path = txt_path.with_suffix('.tok')
        tok = tok_path.read_bytes() if tok_path.exists() else None
    except OSError as e:
        raise IoError(f"cannot read {txt_path}: {e}") from None
    return parse_document(txt, ann, doc_id=txt_path.stem, tok_content=tok)


def write_document(doc, out_dir):
    out_dir = ensure_dir(out_dir)
    txt, ann = serialize_document(doc)
    stem = doc.doc_id or 'document'
    try:
        (out_dir / f"{stem}.txt").write_text(txt, encoding='utf-8')
        (out_dir / f"{stem}.ann").write_text(ann, encoding='utf-8')
        if tuple(doc.sentences) != tokenize(doc.text):
            (out_dir / f"{stem}.tok").write_text(serialize_tokens(doc), encoding='utf-8')
    except OSError as e:
        raise IoError(f"cannot write {stem} to {out_dir}: {e}") from None
    return out_dir / f"{stem}.txt"


def _dataset_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"not a directory: {directory}")
    return paired_files(directory)


def read_dataset(directory):
    """All documents of a BRAT directory, in file-name order (read in parallel)."""
    triples = _dataset_files(directory)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        docs = list(pool.map(lambda t: read_document(t[1]), triples))
    debug(f"read {len(docs)} documents from {directory}")
    return docs


def iter_dataset(directory):
    for _, txt, _ in _dataset_files(directory):
        yield read_document(txt)


# --- validation ------------------------------------------------------------

def _overlaps(a, b):
    return a.token_begin <= b.token_end and b.token_begin <= a.token_end


def _crosses(a, b):
    return (a.token_begin < b.token_begin <= a.token_end < b.token_end
            or b.token_begin < a.token_begin <= b.token_end < a.token_end)


def document_violations(doc, schema):
    """Schema violations of one parsed document."""
    out = []
    for span in doc.spans:
        if not schema.accepts_span_label(span.label):
            out.append(Violation('UnknownSpanLabel', doc.doc_id, span.span_id,
                                 f"{span.label!r} is not a {schema.name} span label"))
    for rel in doc.relations:
        if not schema.accepts_relation_label(rel.label):
            out.append(Violation('UnknownRelationLabel', doc.doc_id, rel.rel_id,
                                 f"{rel.label!r} is not a {schema.name} relation label"))

    if schema.instance_scope.value == 'Sentence':
        by_id = doc.span_index()
        for span in doc.spans:
            if doc.sentence_of_token(span.token_begin) != doc.sentence_of_token(span.token_end):
                out.append(Violation('SpanCrossesSentence', doc.doc_id, span.span_id,
                                     'span covers tokens of two sentences'))
        for rel in doc.relations:
            head, tail = by_id[rel.head_span_id], by_id[rel.tail_span_id]
            if doc.sentence_of_token(head.token_begin) != doc.sentence_of_token(tail.token_begin):
                out.append(Violation('RelationCrossesSentence', doc.doc_id, rel.rel_id,
                                     'relation links spans in different sentences'))

    spans = sorted(doc.spans, key=lambda s: (s.token_begin, s.token_end))
    for i, a in enumerate(spans):
        for b in spans[i + 1:]:
            if b.token_begin > a.token_end:
                break
            if not schema.allow_overlap and _overlaps(a, b):
                out.append(Violation('OverlappingSpans', doc.doc_id, b.span_id,
                                     f"{b.span_id} overlaps {a.span_id}"))
            if schema.nested_brackets and _crosses(a, b):
                out.append(Violation('CrossingBrackets', doc.doc_id, b.span_id,
                                     f"{b.span_id} crosses {a.span_id}"))

    if schema.single_parent:
        parents = {}
        for rel in doc.relations:
            if rel.tail_span_id in parents:
                out.append(Violation('MultipleParents', doc.doc_id, rel.rel_id,
                                     f"{rel.tail_span_id} already has head {parents[rel.tail_span_id]}"))
            else:
                parents[rel.tail_span_id] = rel.head_span_id
        reported = set()
        for start in parents:
            node, path = start, []
            while node in parents and node not in path:
                path.append(node)
                node = parents[node]
            if node in path and node not in reported:
                cycle = path[path.index(node):]
                reported.update(cycle)
                out.append(Violation('Cycle', doc.doc_id, node, ' -> '.join(cycle + [node])))
    return out


def _validate_file(triple, schema):
    stem, txt, _ = triple
    try:
        doc = read_document(txt)
    except BratError as e:
        return [Violation('ParseError', stem, '', str(e))]
    return document_violations(doc, schema)


def validate_dataset(directory, schema):
    """Check every .txt/.ann pair in `directory` against `schema`; [] means valid."""
    triples = _dataset_files(directory)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda t: _validate_file(t, schema), triples))
    violations = [v for found in results for v in found]
    if violations:
        log('WARN', f"{len(violations)} violation(s) in {len(triples)} document(s) under {schema.name}")
    else:
        log('OK', f"{len(triples)} document(s) valid under {schema.name}")
    return violations
