"""Editable place-name canonicalization and interest-category rules."""

from __future__ import annotations

import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


def clean_text(value) -> str | None:
    """Collapse whitespace; empty strings become None."""
    if value is None:
        return None
    text = " ".join(str(value).split())
    return text or None


def _load_json(path: str | Path | None, default_name: str) -> dict:
    if path is None:
        return json.loads(resources.files("swarmtrace.data").joinpath(default_name).read_text())
    return json.loads(Path(path).read_text())


@dataclass
class PlaceTable:
    """City and country canonicalization.

    City rules are region-aware: an explicit rule with a region only fires for
    that region, and the automatic case-variant merge only unifies spellings
    that share both country and region.
    """

    cities: list[dict] = field(default_factory=list)
    protected: set[tuple[str, str | None]] = field(default_factory=set)
    countries: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None = None) -> PlaceTable:
        data = _load_json(path, "places.json")
        return cls(
            cities=list(data.get("cities", [])),
            protected={(p["name"], p.get("region")) for p in data.get("protected", [])},
            countries={k.casefold(): v for k, v in data.get("countries", {}).items()},
        )

    def country(self, name: str | None) -> str | None:
        name = clean_text(name)
        if name is None:
            return None
        return self.countries.get(name.casefold(), name)

    def city(self, name: str | None, region: str | None, country: str | None) -> str | None:
        name = clean_text(name)
        if name is None:
            return None
        for rule in self.cities:
            if rule["name"].casefold() != name.casefold():
                continue
            if rule.get("region") not in (None, region):
                continue
            if rule.get("country") not in (None, country):
                continue
            return rule["canonical"]
        return name

    def merge_case_variants(self, rows: list[tuple[str, str | None, str | None]]
                            ) -> dict[tuple[str, str | None, str | None], str]:
        """Pick one spelling per (casefolded city, region, country) group.

        ``rows`` holds one (city, region, country) triple per IP. Returns a map
        from each non-canonical triple to its replacement city spelling. The most
        frequent spelling wins; ties go to the lexicographically smallest.
        Protected spellings are never rewritten.
        """
        groups: dict[tuple, Counter] = defaultdict(Counter)
        for city, region, country in rows:
            groups[(city.casefold(), region, country)][city] += 1
        out = {}
        for (_, region, country), spellings in groups.items():
            if len(spellings) < 2:
                continue
            best = min(spellings, key=lambda s: (-spellings[s], s))
            for s in spellings:
                if s != best and (s, region) not in self.protected:
                    out[(s, region, country)] = best
        return out


@dataclass
class InterestRules:
    rules: list[tuple[re.Pattern, str, re.Pattern | None, re.Pattern | None]]

    @classmethod
    def load(cls, path: str | Path | None = None) -> InterestRules:
        data = _load_json(path, "interest_rules.json")
        scope = data.get("scope", {})
        compiled = []
        for r in data.get("rules", []):
            cat = r.get("when_category", scope.get("category"))
            upl = r.get("when_uploader", scope.get("uploader"))
            compiled.append((
                re.compile(r["pattern"], re.IGNORECASE),
                r["interest"],
                re.compile(cat, re.IGNORECASE) if cat else None,
                re.compile(upl, re.IGNORECASE) if upl else None,
            ))
        return cls(compiled)

    def classify(self, title: str, category: str = "", uploader: str = "") -> str | None:
        # dots and underscores stand in for spaces in many release names
        text = re.sub(r"[._]+", " ", title)
        for pattern, interest, cat_re, upl_re in self.rules:
            if cat_re is not None and not cat_re.search(category or ""):
                continue
            if upl_re is not None and not upl_re.search(uploader or ""):
                continue
            if pattern.search(text):
                return interest
        return None
