"""Obfuscation-aware tweet normalization.

Offensive words are often disguised ("a$$hole", "a$sh0le", "a**hole"). A list
of canonical offensive words is expanded into every variant reachable through
a bounded number of character substitutions; tokens matching a variant are
rewritten to the canonical word. Matching is whole-token only.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from itertools import combinations, product
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from errors import DataFormatError

logger = logging.getLogger(__name__)

DEFAULT_MAX_SUBSTITUTIONS = 3
DEFAULT_MAX_VARIANTS_PER_WORD = 50000
MASK_KEY = "*"

DEFAULT_SUBSTITUTION_ENTRIES: Dict[str, Tuple[str, ...]] = {
    "a": ("@", "4"),
    "b": ("8",),
    "e": ("3",),
    "g": ("9",),
    "i": ("1", "!"),
    "l": ("1",),
    "o": ("0",),
    "s": ("$", "5"),
    "t": ("7",),
}
DEFAULT_UNIVERSAL: Tuple[str, ...] = ("*",)

# Fixed emoticon table. Entries ending in a letter or digit only match when
# not followed by another letter or digit (":D" but not ":Dance").
EMOTICONS: Tuple[str, ...] = (
    ":)", ":-)", ":(", ":-(", ";)", ";-)", ":D", ":-D", ";D", ":P", ":-P", ":p", ":-p",
    ";P", ";p", ":o", ":O", ":-o", ":-O", ":/", ":-/", ":\\", ":|", ":-|", ":'(", ":')",
    ":*", ":-*", ":3", ":>", ":<", ":]", ":[", ":}", ":{", "=)", "=(", "=D", "=P",
    "xD", "XD", "xd", "D:", "<3", "</3", "^^", "^_^", "-_-", "o_O", "O_o", "8)", "B)",
    ">:(", ">:)", "T_T", ";_;",
)

# Characters split off the start and end of a token. Other symbols ($ * @ #)
# stay attached because they carry obfuscation, mentions and hashtags.
PUNCTUATION = ".,!?;:\"'()[]{}<>…“”‘’«»"

CONTRACTIONS: Dict[str, Tuple[str, ...]] = {
    "i'm": ("I", "am"),
    "i've": ("I", "have"),
    "i'll": ("I", "will"),
    "i'd": ("I", "would"),
    "you're": ("you", "are"),
    "you've": ("you", "have"),
    "you'll": ("you", "will"),
    "you'd": ("you", "would"),
    "he's": ("he", "is"),
    "she's": ("she", "is"),
    "it's": ("it", "is"),
    "that's": ("that", "is"),
    "what's": ("what", "is"),
    "there's": ("there", "is"),
    "we're": ("we", "are"),
    "we've": ("we", "have"),
    "we'll": ("we", "will"),
    "they're": ("they", "are"),
    "they've": ("they", "have"),
    "they'll": ("they", "will"),
    "isn't": ("is", "not"),
    "aren't": ("are", "not"),
    "wasn't": ("was", "not"),
    "weren't": ("were", "not"),
    "don't": ("do", "not"),
    "doesn't": ("does", "not"),
    "didn't": ("did", "not"),
    "haven't": ("have", "not"),
    "hasn't": ("has", "not"),
    "hadn't": ("had", "not"),
    "can't": ("can", "not"),
    "couldn't": ("could", "not"),
    "won't": ("will", "not"),
    "wouldn't": ("would", "not"),
    "shouldn't": ("should", "not"),
    "ain't": ("is", "not"),
    "let's": ("let", "us"),
}

ABBREVIATIONS: Dict[str, Tuple[str, ...]] = {
    "w/": ("with",),
    "w/o": ("without",),
    "u": ("you",),
    "ur": ("your",),
    "r": ("are",),
    "b4": ("before",),
    "bc": ("because",),
    "b/c": ("because",),
    "idk": ("I", "do", "not", "know"),
    "imo": ("in", "my", "opinion"),
    "smh": ("shaking", "my", "head"),
    "thx": ("thanks",),
    "pls": ("please",),
    "plz": ("please",),
    "ppl": ("people",),
    "tho": ("though",),
    "bf": ("boyfriend",),
    "gf": ("girlfriend",),
}


@dataclass(frozen=True)
class SubstitutionMap:
    """Letter -> visually equivalent replacements; `universal` applies to any letter."""

    entries: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    universal: Tuple[str, ...] = ()

    def __post_init__(self):
        for letter, replacements in self.entries.items():
            if len(letter) != 1 or not letter.isalpha() or letter != letter.lower():
                raise DataFormatError(f"Substitution key must be one lowercase letter: {letter!r}")
            for replacement in replacements:
                _check_replacement(replacement)
        for replacement in self.universal:
            _check_replacement(replacement)

    def alternatives(self, char: str) -> Tuple[str, ...]:
        """Replacements for one character, excluding the identity."""
        if not char.isalpha():
            return ()
        seen = []
        for replacement in tuple(self.entries.get(char, ())) + tuple(self.universal):
            if replacement != char and replacement not in seen:
                seen.append(replacement)
        return tuple(seen)


def _check_replacement(replacement: str) -> None:
    if not replacement or any(ch.isspace() for ch in replacement):
        raise DataFormatError(f"Invalid substitution string: {replacement!r}")


DEFAULT_SUBSTITUTION_MAP = SubstitutionMap(DEFAULT_SUBSTITUTION_ENTRIES, DEFAULT_UNIVERSAL)


@dataclass(frozen=True)
class ObfuscationLexicon:
    """Lowercased obfuscated variant -> canonical offensive word."""

    variants: Mapping[str, str]
    base_words: Tuple[str, ...]
    max_substitutions: int

    def lookup(self, token: str) -> Optional[str]:
        return self.variants.get(token.lower())

    def __len__(self) -> int:
        return len(self.variants)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.variants


def load_substitution_map(path: str) -> SubstitutionMap:
    """Read `letter: alt1,alt2` lines; the key `*` lists universal replacements."""
    if not os.path.exists(path):
        raise DataFormatError(f"Substitution map not found: {path}")
    entries: Dict[str, Tuple[str, ...]] = {}
    universal: Tuple[str, ...] = ()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, values = line.partition(":")
            # "::" would be a colon key, which is never a letter
            if not sep:
                raise DataFormatError(f"{path}:{line_no}: expected 'letter: alt1,alt2'")
            key = key.strip()
            replacements = tuple(v.strip() for v in values.split(",") if v.strip())
            if key == MASK_KEY:
                universal = universal + replacements
            else:
                entries[key] = entries.get(key, ()) + replacements
    logger.info(f"Loaded substitution map from {path}: {len(entries)} letters, {len(universal)} universal")
    return SubstitutionMap(entries, universal)


def load_word_list(path: str) -> List[str]:
    """Read one lowercase word per line; `#` starts a comment."""
    if not os.path.exists(path):
        raise DataFormatError(f"Offensive word list not found: {path}")
    words = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.split("#", 1)[0].strip().lower()
            if word:
                words.append(word)
    logger.info(f"Loaded {len(words)} offensive words from {path}")
    return words


def _word_variants(word: str, subs: SubstitutionMap, max_substitutions: int, cap: int) -> List[str]:
    """Variants of `word` with 1..max_substitutions replaced positions, in generation order."""
    options = [(pos, subs.alternatives(ch)) for pos, ch in enumerate(word)]
    positions = [pos for pos, alts in options if alts]
    alternatives = dict(options)
    found = []
    seen = {word}
    for count in range(1, min(max_substitutions, len(positions)) + 1):
        for chosen in combinations(positions, count):
            for replacement in product(*(alternatives[pos] for pos in chosen)):
                chars = list(word)
                for pos, alt in zip(chosen, replacement):
                    chars[pos] = alt
                variant = "".join(chars)
                if variant in seen:
                    continue
                # identity counts toward the cap
                if len(found) + 1 >= cap:
                    logger.warning(f"Variant expansion of '{word}' truncated at {cap} variants")
                    return found
                seen.add(variant)
                found.append(variant)
    return found


def build_variant_table(
    base_words: Iterable[str],
    subs: SubstitutionMap = DEFAULT_SUBSTITUTION_MAP,
    max_substitutions: int = DEFAULT_MAX_SUBSTITUTIONS,
    max_variants_per_word: int = DEFAULT_MAX_VARIANTS_PER_WORD,
) -> ObfuscationLexicon:
    """Expand canonical words into an immutable variant -> canonical table.

    Collisions go to the shorter base word, ties to the lexicographically
    smaller one; identity entries always win over generated variants.
    """
    if max_substitutions < 0:
        raise DataFormatError("max_substitutions must be >= 0")
    words = []
    for word in base_words:
        word = word.strip().lower()
        if word and word not in words:
            words.append(word)
    if not words:
        raise DataFormatError("empty lexicon")

    ordered = sorted(words, key=lambda w: (len(w), w))
    table: Dict[str, str] = {word: word for word in ordered}
    collisions = 0
    for word in ordered:
        for variant in _word_variants(word, subs, max_substitutions, max_variants_per_word):
            if variant in table:
                collisions += table[variant] != word
                continue
            table[variant] = word
    logger.info(f"Built obfuscation lexicon: {len(words)} words, {len(table)} variants, {collisions} collisions")
    return ObfuscationLexicon(MappingProxyType(table), tuple(words), max_substitutions)


def build_lexicon(word_list_path: str, substitutions_path: Optional[str] = None,
                  max_substitutions: int = DEFAULT_MAX_SUBSTITUTIONS,
                  max_variants_per_word: int = DEFAULT_MAX_VARIANTS_PER_WORD) -> ObfuscationLexicon:
    """Variant table for a word-list file, using the default substitutions unless a map file is given."""
    subs = load_substitution_map(substitutions_path) if substitutions_path else DEFAULT_SUBSTITUTION_MAP
    return build_variant_table(load_word_list(word_list_path), subs, max_substitutions, max_variants_per_word)


def normalize_token(token: str, lexicon: ObfuscationLexicon) -> str:
    """The canonical word for an obfuscated variant, else the token unchanged."""
    canonical = lexicon.lookup(token)
    return canonical if canonical is not None else token


_P = re.escape(PUNCTUATION)


def _emoticon_pattern(emoticons) -> str:
    alnum_end = sorted((e for e in emoticons if e[-1].isalnum()), key=len, reverse=True)
    other = sorted((e for e in emoticons if not e[-1].isalnum()), key=len, reverse=True)
    return (rf"(?:{'|'.join(map(re.escape, alnum_end))})(?![A-Za-z0-9])"
            rf"|{'|'.join(map(re.escape, other))}")


_EMOTICON = _emoticon_pattern(EMOTICONS)
# Emoticons that can be split off the end of a word; "xD" or "8)" would cut real words.
_ATTACHED_EMOTICON = _emoticon_pattern([e for e in EMOTICONS if not e[0].isalnum()])
_WORD_CHAR = rf"(?:(?!{_ATTACHED_EMOTICON})[^{_P}])"
_INNER_PUNCT = rf"(?:(?!{_ATTACHED_EMOTICON})[{_P}])"

_TOKEN_RE = re.compile(
    rf"(?P<url>(?i:https?://|www\.)\S*?(?=[{_P}]*\Z))"
    rf"|(?P<emoticon>{_EMOTICON})"
    rf"|(?P<word>{_WORD_CHAR}+(?:{_INNER_PUNCT}+{_WORD_CHAR}+)*)"
    rf"|(?P<punct>[{_P}])(?P=punct)*"
)


def _tokenize_chunk(chunk: str) -> List[str]:
    return [match.group(0) for match in _TOKEN_RE.finditer(chunk)]


def tokenize_tweet(text: str) -> List[str]:
    """Split on whitespace, then detach leading/trailing punctuation runs and emoticons.

    Mentions, hashtags and URLs stay whole. Every non-whitespace character of
    the input appears in exactly one token.
    """
    tokens = []
    for chunk in text.split():
        tokens.extend(_tokenize_chunk(chunk))
    return tokens


def _expand(token: str, table: Mapping[str, Tuple[str, ...]]) -> List[str]:
    """Expansion of a contraction or abbreviation, keeping a leading capital."""
    key = token.lower().replace("’", "'")
    expansion = table.get(key)
    if expansion is None:
        return [token]
    words = list(expansion)
    if token[:1].isupper():
        words[0] = words[0][:1].upper() + words[0][1:]
    return words


def normalize_text(text: str, lexicon: ObfuscationLexicon,
                   expand_contractions: bool = False,
                   expand_abbreviations: bool = False) -> List[str]:
    """Tokenize, optionally expand contractions/abbreviations, then de-obfuscate."""
    tokens = tokenize_tweet(text)
    if expand_contractions:
        tokens = [word for token in tokens for word in _expand(token, CONTRACTIONS)]
    if expand_abbreviations:
        tokens = [word for token in tokens for word in _expand(token, ABBREVIATIONS)]
    return [normalize_token(token, lexicon) for token in tokens]


class TextNormalizer:
    """Preprocessing pipeline shared by training, evaluation and prediction."""

    def __init__(self, lexicon: ObfuscationLexicon, expand_contractions: bool = False,
                 expand_abbreviations: bool = False):
        self.lexicon = lexicon
        self.expand_contractions = expand_contractions
        self.expand_abbreviations = expand_abbreviations
        logger.info("TextNormalizer initialized successfully")

    @classmethod
    def from_config(cls, config) -> "TextNormalizer":
        """Build the lexicon and expansion switches from a RunConfig."""
        try:
            lexicon = build_lexicon(config.word_list, config.substitutions,
                                    config.max_substitutions, config.max_variants_per_word)
            return cls(lexicon, config.expand_contractions, config.expand_abbreviations)
        except Exception as e:
            logger.error(f"Failed to build text normalizer: {str(e)}")
            raise

    def normalize(self, text: str) -> List[str]:
        return normalize_text(text, self.lexicon, self.expand_contractions, self.expand_abbreviations)

    def normalize_many(self, texts: Sequence[str]) -> List[List[str]]:
        """Token lists for a batch of texts."""
        return [self.normalize(text) for text in texts]
