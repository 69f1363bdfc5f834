"""Deterministic synthetic Spanglish-style corpus with an English neighbour pool.

Carrier phrases are mostly Spanish and slot values mostly English, in the
style of the weather/device utterances this toolkit targets. The shipped
fixture under ``csparse/data/synthetic`` is produced by ``write_corpus(seed=13)``.

    python -m csparse.synthetic OUT_DIR [--seed N]
"""
from __future__ import annotations

import argparse
import random
import re
from importlib import resources
from pathlib import Path

from .dataset import Dataset, Example, dump_dataset, load_dataset
from .seqlogical import SemanticParse, SlotAnnotation, Utterance

LOCATIONS = [
    "Miami", "Dallas", "Houston", "Chicago", "Boston", "Denver", "Seattle", "Austin", "Phoenix",
    "Atlanta", "Orlando", "Tampa", "El Paso", "San Juan", "San Diego", "San Antonio", "Los Angeles",
    "New York", "Las Vegas", "Puerto Rico", "Cancun", "Monterrey", "Guadalajara", "Tijuana",
    "Bogota", "Lima", "Madrid", "Barcelona", "Santo Domingo", "Havana", "Newark", "Fresno",
    "Sacramento", "Albuquerque", "Tucson", "Laredo", "Brownsville", "Hialeah", "Jersey City", "Queens",
]
CS_DATES = [
    "para next Friday", "para next Monday", "este weekend", "hoy", "mañana", "tonight",
    "para el weekend", "next week", "el lunes", "el martes", "this afternoon", "mañana en la mañana",
    "para el Sunday", "hasta el 15", "esta noche", "pasado mañana", "el viernes", "next month",
]
EN_DATES = [
    "for next Monday", "for next Friday", "this weekend", "today", "tomorrow", "tonight",
    "for the weekend", "next week", "on Monday", "on Tuesday", "this afternoon", "tomorrow morning",
    "on Sunday", "until the 15th", "this evening", "the day after tomorrow", "on Friday", "next month",
]
WEATHER_ATTRS = ["rain", "snow", "sol", "lluvia", "wind", "fog", "storms", "hail", "humidity", "heat"]
CS_RESOURCES = [
    "el gallery", "maps", "spotify", "la calculator", "whatsapp", "el calendar", "netflix",
    "youtube", "instagram", "la camera", "el browser", "los settings", "el email", "la music app",
    "facebook", "twitter", "el clock", "las notes", "google drive", "uber",
]
EN_RESOURCES = [
    "the gallery", "maps", "spotify", "the calculator", "whatsapp", "the calendar", "netflix",
    "youtube", "instagram", "the camera", "the browser", "the settings", "my email", "the music app",
    "facebook", "twitter", "the clock", "my notes", "google drive", "uber", "pandora", "waze",
    "the weather app", "amazon", "linkedin", "tiktok",
]
CS_COMPONENTS = [
    "el privacy mode", "el speaker", "el wifi", "bluetooth", "la flashlight", "el hotspot",
    "airplane mode", "dark mode", "el GPS", "location services", "el night mode", "la vibration",
    "el auto rotate", "el data saver",
]
EN_COMPONENTS = [
    "the privacy mode", "the speaker", "the wifi", "bluetooth", "the flashlight", "the hotspot",
    "airplane mode", "dark mode", "the GPS", "location services", "night mode", "vibration",
    "auto rotate", "data saver", "the screen reader", "power saving mode",
]
PERCENTS = [str(n) for n in range(10, 101, 5)]
AMOUNTS = [str(n) for n in range(1, 16)]

CS_TEMPLATES = {
    ("weather", "GET_WEATHER"): [
        "Dime el clima {DATE_TIME}",
        "Dime el clima en {LOCATION} {DATE_TIME}",
        "cómo estará el clima en {LOCATION} {DATE_TIME}",
        "Quiero saber el weather en {LOCATION}",
        "necesito el forecast para {LOCATION} {DATE_TIME}",
        "va a haber {WEATHER_ATTRIBUTE} en {LOCATION} {DATE_TIME}",
        "habrá {WEATHER_ATTRIBUTE} {DATE_TIME}",
        "cuál es la temperatura en {LOCATION}",
        "dame el forecast {DATE_TIME}",
        "hace frío en {LOCATION}",
    ],
    ("weather", "UNSUPPORTED_WEATHER"): [
        "how many centimeters va a llover {DATE_TIME}",
        "cuál es el UV index {DATE_TIME}",
        "qué tan alta es la marea en {LOCATION}",
        "cuánto pollen hay {DATE_TIME}",
    ],
    ("device", "OPEN_RESOURCE"): ["Abreme {RESOURCE}", "Abre {RESOURCE}", "quiero ver {RESOURCE}",
                                  "lanza {RESOURCE} por favor"],
    ("device", "CLOSE_RESOURCE"): ["Cierra {RESOURCE}", "cierrame {RESOURCE}", "sal de {RESOURCE}",
                                   "termina {RESOURCE} ahora"],
    ("device", "TURN_ON"): ["Prende {COMPONENT}", "activa {COMPONENT}", "enciende {COMPONENT} porfa"],
    ("device", "TURN_OFF"): ["Desactiva {COMPONENT}", "apaga {COMPONENT}", "quítame {COMPONENT}"],
    ("device", "SET_BRIGHTNESS"): ["subir el brightness al {PERCENT}",
                                   "pon el brightness en {PERCENT} por ciento",
                                   "cambia la brillantez a {PERCENT} percent"],
    ("device", "SET_VOLUME"): ["Turn the volumen al nivel {PRECISE_AMOUNT}",
                               "pon el volume en {PRECISE_AMOUNT}",
                               "ajusta el sound a nivel {PRECISE_AMOUNT}"],
    ("device", "SLEEP"): ["prende el modo sleep", "pon el phone en sleep mode", "a dormir el phone"],
    ("device", "WAKE_UP"): ["Quita sleep mode", "despierta el phone", "wake up el teléfono"],
    ("device", "MUTE_VOLUME"): ["Desactiva el sound", "pon el phone en silent", "silencia todo"],
    ("device", "INCREASE_VOLUME"): ["aumenta el volumen a little bit", "sube el volume",
                                    "más volume por favor"],
}

EN_TEMPLATES = {
    ("weather", "GET_WEATHER"): [
        "show me the weather {DATE_TIME}",
        "what is the weather in {LOCATION} {DATE_TIME}",
        "how will the weather be in {LOCATION} {DATE_TIME}",
        "I want to know the weather in {LOCATION}",
        "I need the forecast for {LOCATION} {DATE_TIME}",
        "will there be {WEATHER_ATTRIBUTE} in {LOCATION} {DATE_TIME}",
        "is there going to be {WEATHER_ATTRIBUTE} {DATE_TIME}",
        "what is the temperature in {LOCATION}",
        "give me the forecast {DATE_TIME}",
        "is it cold in {LOCATION}",
    ],
    ("weather", "UNSUPPORTED_WEATHER"): [
        "how many centimeters will it rain {DATE_TIME}",
        "what is the UV index {DATE_TIME}",
        "how high is the tide in {LOCATION}",
        "how much pollen is there {DATE_TIME}",
    ],
    ("device", "OPEN_RESOURCE"): ["open {RESOURCE}", "please open {RESOURCE}", "launch {RESOURCE}",
                                  "I want to see {RESOURCE}"],
    ("device", "CLOSE_RESOURCE"): ["close {RESOURCE}", "exit {RESOURCE}", "quit {RESOURCE} now",
                                   "please close {RESOURCE}"],
    ("device", "TURN_ON"): ["turn on {COMPONENT}", "enable {COMPONENT}", "switch on {COMPONENT} please"],
    ("device", "TURN_OFF"): ["turn off {COMPONENT}", "disable {COMPONENT}", "switch off {COMPONENT}"],
    ("device", "SET_BRIGHTNESS"): ["set brightness to {PERCENT}", "set the brightness at {PERCENT} percent",
                                   "change brightness to {PERCENT}"],
    ("device", "SET_VOLUME"): ["set the volume to {PRECISE_AMOUNT}", "volume level {PRECISE_AMOUNT}",
                               "change the sound to level {PRECISE_AMOUNT}"],
    ("device", "SLEEP"): ["turn on sleep mode", "put the phone to sleep", "go to sleep"],
    ("device", "WAKE_UP"): ["turn off sleep mode", "wake up the phone", "wake up"],
    ("device", "MUTE_VOLUME"): ["mute the sound", "put the phone on silent", "mute everything"],
    ("device", "INCREASE_VOLUME"): ["turn the volume up a little bit", "raise the volume",
                                    "more volume please"],
}

CS_VALUES = {"LOCATION": LOCATIONS, "DATE_TIME": CS_DATES, "WEATHER_ATTRIBUTE": WEATHER_ATTRS,
             "RESOURCE": CS_RESOURCES, "COMPONENT": CS_COMPONENTS, "PERCENT": PERCENTS,
             "PRECISE_AMOUNT": AMOUNTS}
EN_VALUES = {"LOCATION": LOCATIONS, "DATE_TIME": EN_DATES, "WEATHER_ATTRIBUTE": WEATHER_ATTRS,
             "RESOURCE": EN_RESOURCES, "COMPONENT": EN_COMPONENTS, "PERCENT": PERCENTS,
             "PRECISE_AMOUNT": AMOUNTS}

_SLOT = re.compile(r"\{([A-Z_]+)\}")


def realize(template: str, values: dict[str, list[str]], rng: random.Random):
    """Fill a template, returning tokens and the parse's slot spans."""
    tokens: list[str] = []
    slots = []
    for piece in template.split():
        m = _SLOT.fullmatch(piece)
        if m is None:
            tokens.append(piece)
            continue
        label = m.group(1)
        filler = rng.choice(values[label]).split()
        slots.append(SlotAnnotation(len(tokens), len(tokens) + len(filler), label))
        tokens.extend(filler)
    return tokens, slots


def _sample(templates, values, n, rng, prefix, language):
    keys = sorted(templates)
    seen = set()
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n:
            raise RuntimeError("template space too small for the requested size")
        domain, intent = keys[rng.randrange(len(keys))]
        tmpl = rng.choice(templates[(domain, intent)])
        tokens, slots = realize(tmpl, values, rng)
        ex = Example(f"{prefix}-{len(out):05d}", domain, Utterance(tuple(tokens)),
                     SemanticParse(intent, tuple(slots)), language)
        if ex.seqlogical in seen:
            continue
        seen.add(ex.seqlogical)
        out.append(ex)
    return out


def generate_corpus(seed: int = 13, n_train: int = 600, n_valid: int = 100, n_test: int = 300,
                    n_pool: int = 1500) -> dict[str, Dataset]:
    rng = random.Random(seed)
    cs = _sample(CS_TEMPLATES, CS_VALUES, n_train + n_valid + n_test, rng, "cs", "cs")
    pool = _sample(EN_TEMPLATES, EN_VALUES, n_pool, rng, "en", "en")
    return {
        "train": Dataset(cs[:n_train], "train"),
        "valid": Dataset(cs[n_train:n_train + n_valid], "valid"),
        "test": Dataset(cs[n_train + n_valid:], "test"),
        "en_pool": Dataset(pool, "unsplit"),
    }


def write_corpus(out_dir, seed: int = 13) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, ds in generate_corpus(seed).items():
        paths[name] = out_dir / f"{name}.jsonl"
        dump_dataset(ds, paths[name])
    return paths


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("csparse") / "data" / "synthetic" / f"{name}.jsonl"))


def load_fixture() -> dict[str, Dataset]:
    """The shipped synthetic corpus: train/valid/test code-switched splits and an English pool."""
    return {name: load_dataset(fixture_path(name), split=split)
            for name, split in (("train", "train"), ("valid", "valid"), ("test", "test"),
                                ("en_pool", "unsplit"))}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args(argv)
    for name, path in write_corpus(args.out_dir, args.seed).items():
        print(f"{name}\t{path}")


if __name__ == "__main__":
    main()
