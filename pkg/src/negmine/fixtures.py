"""Deterministic desk-scale fixtures: procedural images, known scenes for the
mock tagger, and the concept lookup table behind the mock augmenter.

The two named scenes pin down the worked seagull/bird examples used throughout
the test suite; everything else is synthesized from seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .core import ImageRef, SourcePair
from .manifest import save_image, save_pairs
from .seeding import rng_from

FIXTURE_WIDTH = 64
FIXTURE_HEIGHT = 48


@dataclass(frozen=True)
class SceneFixture:
    name: str
    tags: Tuple[str, ...]
    human_caption: str
    tagger_caption: str


SCENES = {
    "seagull_ship": SceneFixture(
        name="seagull_ship",
        tags=("seagull", "water", "ship", "city"),
        human_caption="a seagull flying over the water near a large ship",
        tagger_caption="a seagull in the ocean near a harbor with a ship "
                       "and a city in the background",
    ),
    "bird_rock": SceneFixture(
        name="bird_rock",
        tags=("bird", "rock"),
        human_caption="a bird is standing on a rock",
        tagger_caption="a bird standing on a rock under a clear sky",
    ),
}


# concept -> (keyword, portrayal) variations; keyword <= 3 words, portrayal
# is the richer description handed to the inpainter
AUGMENT_LOOKUP = {
    "bird": (
        ("bald eagle", "a black and white bald eagle"),
        ("red parrot", "a bright red parrot with green wing tips"),
        ("snowy owl", "a snowy owl with speckled white feathers"),
        ("blue jay", "a vivid blue jay with a crested head"),
    ),
    "seagull": (
        ("bald eagle", "a black and white bald eagle"),
        ("brown pelican", "a large brown pelican with a long orange bill"),
        ("white heron", "a tall white heron standing gracefully"),
        ("black cormorant", "a sleek black cormorant drying its wings"),
    ),
    "water": (
        ("mountain lake", "a serene mountain lake with crystal clear water"),
        ("stormy sea", "a stormy sea with whitecapped waves"),
        ("frozen pond", "a frozen pond with a thin sheet of ice"),
        ("muddy river", "a muddy river winding through the valley"),
    ),
    "city": (
        ("historic town", "a historic town with cobblestone streets"),
        ("modern skyline", "a modern skyline of glass towers"),
        ("fishing village", "a small fishing village with colorful houses"),
        ("port district", "an industrial port district with tall cranes"),
    ),
    "ship": (
        ("wooden sailboat", "an old wooden sailboat with white sails"),
        ("cargo freighter", "a rusty cargo freighter stacked with containers"),
        ("cruise liner", "a gleaming white cruise liner with rows of decks"),
        ("fishing trawler", "a weathered fishing trawler draped with nets"),
    ),
    "rock": (
        ("volcanic rock", "a jagged volcanic rock formation"),
        ("tower of rocks", "a carefully balanced tower of smooth rocks"),
        ("granite boulder", "a massive granite boulder streaked with quartz"),
        ("mossy stone", "a rounded stone covered in green moss"),
    ),
    "bread": (
        ("freshly baked loaf", "a freshly baked loaf with a golden crust"),
        ("crusty baguette", "a long crusty french baguette"),
        ("rye loaf", "a dark rye loaf dusted with flour"),
        ("braided challah", "a glossy braided challah bread"),
    ),
}

# vocabulary for images the mock tagger has never seen
TAG_VOCABULARY = (
    "tree", "car", "house", "dog", "boat", "mountain", "flower",
    "chair", "train", "kite", "horse", "lamp", "bridge", "bench",
)

_ADJECTIVES = (
    "rustic", "gleaming", "weathered", "ornate", "painted", "towering",
    "tiny", "ancient", "crooked", "striped",
)

_DETAILS = (
    "intricate carvings", "a coat of bright paint", "visible wear and tear",
    "delicate patterns", "an unusual silhouette", "bold colors",
)


def synthesize_variations(obj: str, count: int, seed: int) -> List[Tuple[str, str]]:
    """Seeded keyword/portrayal pairs for objects missing from the lookup."""
    rng = rng_from("augment-fallback", obj, seed)
    adjectives = list(_ADJECTIVES)
    rng.shuffle(adjectives)
    out = []
    for i in range(count):
        adj = adjectives[i % len(adjectives)]
        detail = _DETAILS[int(rng.integers(len(_DETAILS)))]
        out.append((f"{adj} {obj}", f"a {adj} {obj} with {detail}"))
    return out


def fixture_image(name: str, width: int = FIXTURE_WIDTH,
                  height: int = FIXTURE_HEIGHT) -> np.ndarray:
    """Procedural RGB image, stable across runs for a given name."""
    rng = rng_from("fixture-image", name)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    channels = []
    for c in range(3):
        a, b, phase = rng.uniform(0.5, 2.0, size=3)
        wave = 127.0 + 60.0 * np.sin(a * xx / 9.0 + phase) \
                     + 40.0 * np.cos(b * yy / 7.0)
        noise = rng.normal(0.0, 12.0, size=(height, width))
        channels.append(np.clip(wave + noise, 0, 255))
    return np.stack(channels, axis=-1).astype(np.uint8)


def make_demo_pairs(out_dir, n_pairs: int = 10, seed: int = 0,
                    tagger=None) -> List[SourcePair]:
    """Write a small pairs manifest plus images under `out_dir`.

    The first two pairs are the named fixture scenes; the rest are procedural
    images captioned from whatever the mock tagger detects in them, so both
    the direct-replacement and the generated-caption fallback paths get
    exercised downstream.
    """
    if tagger is None:
        from .backends import MockTagger
        tagger = MockTagger()
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    pairs = []
    for i, name in enumerate(("seagull_ship", "bird_rock")):
        if i >= n_pairs:
            break
        scene = SCENES[name]
        image = fixture_image(name)
        pair_id = f"pair-{i:03d}"
        rel = f"images/{pair_id}.png"
        save_image(image, images_dir / f"{pair_id}.png")
        pairs.append(SourcePair(
            id=pair_id,
            image=ImageRef(id=pair_id, path=rel,
                           width=image.shape[1], height=image.shape[0]),
            caption=scene.human_caption,
        ))
    for i in range(len(pairs), n_pairs):
        image = fixture_image(f"demo-{seed}-{i}")
        tags, _ = tagger.tag(image)
        rng = rng_from("demo-caption", seed, i)
        picks = [t.label for t in tags[:2]] or ["scene"]
        if len(picks) == 1:
            caption = f"a {picks[0]} on a sunny day"
        else:
            caption = f"a {picks[0]} next to a {picks[1]}"
        if rng.random() < 0.3:
            caption += " in the distance"
        pair_id = f"pair-{i:03d}"
        rel = f"images/{pair_id}.png"
        save_image(image, images_dir / f"{pair_id}.png")
        pairs.append(SourcePair(
            id=pair_id,
            image=ImageRef(id=pair_id, path=rel,
                           width=image.shape[1], height=image.shape[0]),
            caption=caption,
        ))
    save_pairs(pairs, out_dir / "pairs.jsonl")
    return pairs
