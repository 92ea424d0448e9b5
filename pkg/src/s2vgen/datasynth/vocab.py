"""Closed prompt vocabulary of the sprite world."""

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (40, 70, 230),
    "yellow": (240, 220, 40),
    "magenta": (220, 40, 220),
    "cyan": (40, 220, 220),
    "orange": (250, 140, 20),
    "white": (245, 245, 245),
}
COLOR_NAMES = list(COLORS)

SHAPES = ["circle", "square", "triangle", "diamond"]

MOTIONS = ["still", "left", "right", "up", "down"]

# name, base rgb, accent rgb, pattern, period
BACKGROUNDS = [
    ("grass", (70, 130, 60), (95, 160, 80), "hstripes", 4),
    ("sand", (200, 180, 130), (175, 155, 105), "checker", 8),
    ("sky", (120, 170, 220), (150, 195, 235), "vstripes", 8),
    ("brick", (150, 70, 50), (110, 50, 40), "bricks", 8),
    ("night", (30, 30, 70), (60, 60, 110), "dots", 4),
    ("stone", (120, 120, 120), (90, 90, 90), "checker", 4),
    ("ocean", (30, 90, 140), (50, 120, 170), "diagonal", 8),
    ("forest", (30, 80, 40), (55, 105, 55), "vstripes", 4),
]
BACKGROUND_NAMES = [b[0] for b in BACKGROUNDS]

FUNCTION_WORDS = ["<pad>", "a", "and", "moving", "on"]

VOCAB = FUNCTION_WORDS + COLOR_NAMES + SHAPES + MOTIONS + BACKGROUND_NAMES
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


def encode(caption: str) -> list[int]:
    try:
        return [WORD_TO_ID[w] for w in caption.lower().split()]
    except KeyError as exc:
        raise ValueError(f"word {exc.args[0]!r} is not in the prompt vocabulary") from None


def decode(ids) -> str:
    return " ".join(VOCAB[i] for i in ids)
