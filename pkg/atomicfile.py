"""Atomic writes for run artifacts: records, final diagnoses, manifests and indexes."""
import json
import os
import tempfile


class AtomicFileWriter:
    """AtomicFileWriter writes into a temporary file beside the target and renames it on success.

    A failed write leaves the previous file untouched.
    """

    def __init__(self, filename, mode="wt", encoding="utf-8"):
        self.filename = os.fspath(filename)
        self.tmpfilename = None
        self.file = None

        dirname = os.path.dirname(os.path.abspath(self.filename))
        os.makedirs(dirname, exist_ok=True)
        temp_fd, self.tmpfilename = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=os.path.basename(self.filename))
        if "b" in mode:
            self.file = os.fdopen(temp_fd, mode)
        else:
            self.file = os.fdopen(temp_fd, mode, encoding=encoding, newline="\n")

    def __enter__(self):
        return self.file

    def __exit__(self, exc_type, exc_value, traceback):
        if exc_type is not None:
            self.file.close()
            os.unlink(self.tmpfilename)
            return False

        # make sure that all data is on disk before the rename
        self.file.flush()
        os.fsync(self.file.fileno())
        self.file.close()

        os.replace(self.tmpfilename, self.filename)
        return False


def write_json(filename, document):
    """write_json() writes a JSON document with sorted keys, so equal documents give identical bytes."""
    with AtomicFileWriter(filename) as f:
        json.dump(document, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def read_json(filename):
    with open(filename, "rt", encoding="utf-8") as f:
        return json.load(f)
