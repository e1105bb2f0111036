class Color:
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'


def highlight(text, color=Color.GREEN):
    return Color.BOLD + color + text + Color.END
