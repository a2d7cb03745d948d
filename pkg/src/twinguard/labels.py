"""Class labels shared across the pipeline."""

from enum import IntEnum

import numpy as np


class Label(IntEnum):
    UNLABELED = -1
    NOT_DDOS = 0
    DDOS = 1

    @property
    def text(self):
        return _TEXT[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, Label):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        try:
            return _PARSE[key]
        except KeyError:
            raise ValueError(f"not a class label: {value!r}") from None


_TEXT = {Label.UNLABELED: "Unlabeled", Label.NOT_DDOS: "NotDDoS", Label.DDOS: "DDoS"}
_PARSE = {"ddos": Label.DDOS, "notddos": Label.NOT_DDOS, "benign": Label.NOT_DDOS,
          "unlabeled": Label.UNLABELED, "1": Label.DDOS, "0": Label.NOT_DDOS}

DDOS = int(Label.DDOS)
NOT_DDOS = int(Label.NOT_DDOS)


def label_text(values):
    return [_TEXT[Label(int(v))] for v in values]
