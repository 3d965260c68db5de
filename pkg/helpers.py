import os
import sys
from pathlib import Path

from colorama import Fore, Style, init as colorama_init

colorama_init()

TAG_COLORS = {
    'OK': Fore.GREEN,
    'INFO': Fore.CYAN,
    'DATA': Fore.CYAN,
    'TRAIN': Fore.MAGENTA,
    'WARN': Fore.YELLOW,
    'ERROR': Fore.RED,
}


def env_flag(name, default='false'):
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes')


def log(tag, message):
    """Print a tagged console line to stderr, e.g. '[OK] Converted 12 documents'."""
    if env_flag('SPANREL_QUIET') and tag != 'ERROR':
        return
    color = TAG_COLORS.get(tag, '')
    print(f"{color}[{tag}]{Style.RESET_ALL} {message}", file=sys.stderr)


def debug(message):
    if env_flag('SPANREL_DEBUG'):
        print(f"DEBUG: {message}", file=sys.stderr)


def worker_count():
    """Worker cap for per-file parallel work; SPANREL_THREADS overrides the CPU count."""
    raw = os.getenv('SPANREL_THREADS')
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log('WARN', f"Ignoring non-integer SPANREL_THREADS={raw!r}")
    return max(1, os.cpu_count() or 1)


def default_seed():
    try:
        return int(os.getenv('SPANREL_SEED', '13'))
    except ValueError:
        return 13


def paired_files(directory):
    """Return sorted (stem, txt_path, ann_path) triples; a .txt without .ann counts as empty."""
    directory = Path(directory)
    triples = []
    for txt in sorted(directory.glob('*.txt')):
        triples.append((txt.stem, txt, txt.with_suffix('.ann')))
    return triples


def ensure_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
