"""Fixed class and lead orderings shared by every module."""

CLASSES = ("1dAVb", "RBBB", "LBBB", "SB", "AF", "ST")
LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

N_CLASSES = len(CLASSES)
N_LEADS = len(LEADS)


def class_index(name):
    try:
        return CLASSES.index(name)
    except ValueError:
        raise KeyError(f"unknown class {name!r}; expected one of {CLASSES}") from None
