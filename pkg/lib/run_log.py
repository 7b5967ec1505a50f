"""
Logger of training and evaluation runs

"""

# pylint: disable=consider-using-with,too-few-public-methods

import datetime


class RunLogger:

    """
    Generic run logger: progress lines go to the access file,
    failures to the errors file.
    For specific loggers, _shorten_record() should be rewritten.
    """

    def __init__(self, filename_progress, filename_errors, timestamps=True):

        self._filename_progress = filename_progress
        self._filename_errors = filename_errors
        self._timestamps = timestamps
        self._log_progress = open(filename_progress, "a", encoding="utf-8")
        self._log_errors = open(filename_errors, "a", encoding="utf-8")

    def _shorten_record(self, record):
        return record

    def _prefix(self):
        if self._timestamps:
            return str(datetime.datetime.now()) + " "
        return ""

    def log(self, record, error=""):
        """
        Log `record` and `error`
        """

        message = self._prefix()
        record = self._shorten_record(record)
        if error != "":
            message += "ERR " + record + " " + error
            self._log_errors.write(message + "\n")
            self._log_errors.flush()
        else:
            message += "OK  " + record
            self._log_progress.write(message + "\n")
            self._log_progress.flush()

    def close(self):
        "Close both files"

        self._log_progress.close()
        self._log_errors.close()

    def __enter__(self):
        return self

    def __exit__(self, *args):
        self.close()


class TrainLogger(RunLogger):
    """
    Training logger: one line per epoch.
    """

    def _shorten_record(self, record):
        if isinstance(record, dict):
            return " ".join(
                "%s=%s" % (key, _fmt(record[key])) for key in sorted(record)
            )
        return str(record)


class EvalLogger(RunLogger):
    """
    Evaluation logger: keeps only the seed and the returns.
    """

    def _shorten_record(self, record):
        if isinstance(record, dict):
            return "seed=%s returns=%s" % (
                record.get("seed"),
                ",".join(_fmt(x) for x in record.get("returns", [])),
            )
        return str(record)


def _fmt(value):
    if isinstance(value, float):
        return "%.6g" % value
    return str(value)
