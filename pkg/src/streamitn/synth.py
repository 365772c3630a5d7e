"""Synthetic written-form corpora and the small curated LM corpora.

The written generator fills sentence templates with category values that the
starter grammars accept, and records how many spans of each category it
planted. A share of templates put time and number values in identical left
contexts so that only the words after the span tell them apart; those are
the cases where a tagger with a wider chunk has an edge.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass

# ---------------------------------------------------------------------------
# value generators, one per category


def _num(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.25:
        return str(rng.randint(0, 99))
    if kind < 0.65:
        # hundreds written so the short colloquial reading exists (430, 975)
        return str(rng.randint(1, 9) * 100 + rng.randint(10, 99))
    if kind < 0.85:
        return str(rng.randint(10, 99) * 100 + rng.randint(10, 99))
    return f"{rng.randint(10, 999)},{rng.randint(0, 999):03d}"


def _ordinal(rng: random.Random) -> str:
    n = rng.choice([rng.randint(1, 31), rng.randint(1, 100)])
    suffix = "th" if 10 <= n % 100 <= 19 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def _clock(rng: random.Random) -> str:
    return f"{rng.randint(1, 12)}:{rng.choice([0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, rng.randint(1, 59)]):02d}"


def _time(rng: random.Random) -> str:
    t = _clock(rng)
    return t + rng.choice(["", "", " am", " pm"])


def _money(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.1:
        return f"$0.{rng.randint(1, 99):02d}"
    dollars = rng.choice([rng.randint(1, 99), rng.randint(100, 999), rng.randint(1000, 9999)])
    cents = 0 if rng.random() < 0.5 else rng.randint(1, 99)
    whole = f"{dollars // 1000},{dollars % 1000:03d}" if dollars >= 1000 else str(dollars)
    return f"${whole}.{cents:02d}"


def _phone(rng: random.Random) -> str:
    local = f"{rng.randint(200, 999)}-{rng.randint(0, 9999):04d}"
    return local if rng.random() < 0.5 else f"{rng.randint(200, 999)}-{local}"


def _postalcode(rng: random.Random) -> str:
    return f"{rng.randint(10000, 99999)}"


_LETTERS = "ABCDEFGHJKLMNPRSTUVWXYZ"


def _alnum(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.5:
        return rng.choice(_LETTERS) + str(rng.randint(1, 999))
    return str(rng.randint(1, 99)) + rng.choice(_LETTERS)


_MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August",
           "September", "October", "November", "December"]


def _date(rng: random.Random) -> str:
    d = f"{rng.choice(_MONTHS)} {rng.randint(1, 28)}"
    if rng.random() < 0.5:
        d += f", {rng.choice([rng.randint(1950, 1999), rng.randint(2000, 2030)])}"
    return d


def _fraction(rng: random.Random) -> str:
    den = rng.randint(2, 10)
    return f"{rng.randint(1, den - 1)}/{den}"


_UNITS = ["kg", "g", "lb", "mi", "km", "m", "cm", "ft", "in", "L"]


def _measure(rng: random.Random) -> str:
    value = str(rng.randint(1, 999)) if rng.random() < 0.7 else f"{rng.randint(0, 99)}.{rng.randint(1, 9)}"
    return f"{value} {rng.choice(_UNITS)}"


def _percent(rng: random.Random) -> str:
    return (str(rng.randint(1, 100)) if rng.random() < 0.7 else f"{rng.randint(0, 99)}.{rng.randint(1, 9)}") + "%"


def _math(rng: random.Random) -> str:
    a, b = rng.randint(0, 20), rng.randint(1, 20)
    op = rng.choice(["+", "-", "×", "÷"])
    expr = f"{a} {op} {b}"
    if rng.random() < 0.6:
        value = {"+": a + b, "-": a - b, "×": a * b, "÷": a // b}[op]
        if 0 <= value <= 99 and (op != "÷" or a % b == 0):
            expr += f" = {value}"
    return expr


_STREETS = ["Main", "Oak", "Elm", "Pine", "Maple", "Cedar", "Park", "Lake", "Hill",
            "Washington", "Lincoln", "Market", "Church"]
_SUFFIXES = ["St", "Ave", "Rd", "Blvd", "Dr", "Ln", "Ct"]


def _address(rng: random.Random) -> str:
    return f"{rng.randint(1, 999)} {rng.choice(_STREETS)} {rng.choice(_SUFFIXES)}"


def _abbreviation(rng: random.Random) -> str:
    return rng.choice(["Dr.", "Mr.", "Mrs.", "Prof.", "FBI", "NASA", "USA", "CEO", "BBC", "NBA"])


_SITES = ["google", "example", "github", "amazon", "wikipedia", "news", "mail", "shop", "blog",
          "weather", "maps", "acme", "zeta"]
_KNOWN_SITES = _SITES[:-2]
_TLDS = ["com", "org", "net", "edu", "io", "gov"]


def _url(rng: random.Random) -> str:
    # spelled-out hosts stay short enough for a 10-word span
    if rng.random() < 0.3:
        return f"{rng.choice(_KNOWN_SITES)}.{rng.choice(_KNOWN_SITES)}.{rng.choice(_TLDS)}"
    return ("www." if rng.random() < 0.5 else "") + f"{rng.choice(_SITES)}.{rng.choice(_TLDS)}"


_USERS = ["john", "jane", "info", "support", "sales", "alex", "maria", "team", "hello", "admin", "kim", "bob"]


def _email(rng: random.Random) -> str:
    return f"{rng.choice(_USERS)}@{rng.choice(_SITES)}.{rng.choice(_TLDS)}"


VALUES = {
    "num": _num, "ordinal": _ordinal, "time": _time, "money": _money, "phone": _phone,
    "postalcode": _postalcode, "alnum": _alnum, "date": _date, "fraction": _fraction,
    "measure": _measure, "percent": _percent, "math": _math, "address": _address,
    "abbreviation": _abbreviation, "url": _url, "email": _email,
}

# ---------------------------------------------------------------------------
# sentence templates; {} marks the slot

TEMPLATES = {
    "num": ["i counted {} of them", "there were {} people at the game", "we sold {} copies last year",
            "we counted {} so far", "she read {} pages", "add {} to the list", "about {} cars passed by"],
    "ordinal": ["this is the {} time", "he finished {} in the race", "we live on the {} floor",
                "it is our {} anniversary", "the {} try worked"],
    "time": ["see you at {}", "the meeting starts at {}", "wake me up at {}", "the train leaves at {}",
             "let's meet at {} tomorrow", "call me after {}"],
    "money": ["that costs {}", "i paid {} for lunch", "the ticket is {} now", "send me {} please",
              "it was only {}", "the bill came to {}"],
    "phone": ["call me at {}", "my number is {}", "dial {} for help", "text {} when you land"],
    "postalcode": ["the zip code is {}", "ship it to zip {}", "we moved to {} last year"],
    "alnum": ["the gate is {}", "take the {} bus", "my seat is {}", "grab form {} from the desk",
              "room {} is free"],
    "date": ["the party is on {}", "i was born on {}", "we arrive {}", "the deadline is {}"],
    "fraction": ["add {} cup of sugar", "about {} of the class came", "cut it to {} of the size"],
    "measure": ["it weighs {}", "we ran {} today", "the board is {} long", "buy {} of rice"],
    "percent": ["prices rose {}", "the battery is at {}", "only {} voted", "a {} discount"],
    "math": ["tell me what {} is", "i think {}", "solve {} for me", "she wrote {} on the board"],
    "address": ["i live at {}", "the shop is at {}", "drive to {} now", "mail it to {}"],
    "abbreviation": ["{} smith is here", "ask {} jones", "the {} called again", "i met {} brown today"],
    "url": ["go to {}", "check {} for news", "the site is {}", "visit {} later"],
    "email": ["email me at {}", "write to {}", "my address is {}", "send it to {} today"],
}

# identical left context; the category is only given away after the span
AMBIGUOUS_LEFT = ["it is", "the sign said", "she said", "write down", "i saw"]
AMBIGUOUS_RIGHT = {
    "time": ["in the morning", "in the evening", "on the dot", "on the clock", "sharp"],
    "num": ["overall", "votes", "points", "on the scoreboard", "people"],
}

PLAIN = ["how are you doing", "thanks for the help", "i will be there soon", "please close the door",
         "what do you think", "the weather is nice", "can you hear me", "let me know", "sounds good to me",
         "we should go home", "turn on the lights", "play some music", "good morning everyone"]


def _colloquial_time(rng: random.Random) -> str:
    return f"{rng.randint(1, 12)}:{rng.randint(10, 59)}"


def _colloquial_num(rng: random.Random) -> str:
    return str(rng.randint(1, 12) * 100 + rng.randint(10, 59))


@dataclass
class WrittenSentence:
    text: str
    categories: list[str]


def _clause(rng: random.Random, categories: list[str], ambiguous: float) -> tuple[str, list[str]]:
    if rng.random() < ambiguous:
        cat = rng.choice(["time", "num"])
        value = _colloquial_time(rng) if cat == "time" else _colloquial_num(rng)
        return f"{rng.choice(AMBIGUOUS_LEFT)} {value} {rng.choice(AMBIGUOUS_RIGHT[cat])}", [cat]
    cat = rng.choice(categories)
    return rng.choice(TEMPLATES[cat]).format(VALUES[cat](rng)), [cat]


def generate_written(n: int, seed: int = 0, ambiguous: float = 0.25, plain: float = 0.1,
                     two_clause: float = 0.3, categories: list[str] | None = None) -> list[WrittenSentence]:
    """``n`` written sentences with the categories planted in each."""
    rng = random.Random(seed)
    cats = sorted(categories or VALUES)
    out = []
    for _ in range(n):
        if rng.random() < plain:
            out.append(WrittenSentence(rng.choice(PLAIN), []))
            continue
        text, planted = _clause(rng, cats, ambiguous)
        if rng.random() < two_clause:
            more, cs = _clause(rng, cats, ambiguous)
            text, planted = f"{text} and {more}", planted + cs
        out.append(WrittenSentence(text, planted))
    return out


def construction_counts(sents: list[WrittenSentence]) -> Counter:
    return Counter(c for s in sents for c in s.categories)


# ---------------------------------------------------------------------------
# curated corpora for the n-gram models

LEXICAL_LM = """\
take hwy <alnum> one oh one </alnum> north
hwy <alnum> one oh one </alnum> is closed
route <alnum> six six </alnum> runs west
take route <alnum> four oh five </alnum>
the flight leaves from gate <alnum> b twelve </alnum>
<num> one hundred and one </num> dalmatians
we watched <num> one hundred and one </num> dalmatians
the movie <num> one hundred and one </num> dalmatians is fun
that will be <num> four fifty </num>
that will be <money> twenty five dollars </money>
see you at <time> four thirty </time>
see you at <time> half past four </time>
meet me at <time> quarter to two </time>
<measure> one kilogram </measure> of flour
<measure> five kilograms </measure> of rice
<measure> one mile </measure> to go
we ran <measure> ten miles </measure>
<fraction> three quarters </fraction> of the pie
<fraction> one half </fraction> of the cake
<fraction> two thirds </fraction> of the class
<fraction> one quarter </fraction> cup of sugar
<fraction> one third </fraction> of the votes
<money> one dollar and one cent </money>
<money> one cent </money>
<money> ninety nine cents </money>
<money> one hundred dollars </money>
the <ordinal> twenty first </ordinal> floor
"""


DISPLAY_LM = """\
see you at 4:30
see you at 5:15
let's meet at 9:00
call me at 4:30 pm
the meeting is at 1:45
on route 430
on route 101
take hwy 101 north
drive on route 66
that will be $4.50
that will be 450
we sold 430 copies
it is 4:30 in the morning
it is 430 overall
"""


def lexical_lm_sentences() -> list[list[str]]:
    return [line.split() for line in LEXICAL_LM.splitlines() if line.strip()]


def display_lm_sentences() -> list[list[str]]:
    return [line.split() for line in DISPLAY_LM.splitlines() if line.strip()]
