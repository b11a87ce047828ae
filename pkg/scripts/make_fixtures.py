#!/usr/bin/env python3
"""Regenerate the shipped fixtures under src/riskforge/fixtures/.

    python scripts/make_fixtures.py

Outputs are deterministic; rerunning must leave git clean.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

from riskforge.actions import Action
from riskforge.model import Trajectory, write_trajectories
from riskforge.webenv.oracle import oracle_episode
from riskforge.webenv.site import TaskSpec, save_site, save_tasks, site_from_json

OUT = Path(__file__).resolve().parents[1] / "src" / "riskforge" / "fixtures"

HOME = "https://shop.acme.example/"
ABOUT = HOME + "about"
CONTACT = HOME + "contact"
TRACK = HOME + "track"
RESULT = HOME + "track/result"
CHECKOUT = HOME + "checkout"
DEAD = "https://partners.dead.example/"

SITE = {
    "schema_version": 1,
    "name": "acme",
    "start_url": HOME,
    "page_size": 6,
    "external_dead": [DEAD],
    "pages": {
        HOME: {
            "title": "ACME Outfitters",
            "elements": [
                {"tag": "h1", "text": "ACME Outfitters"},
                {"tag": "p", "text": "Outdoor gear since 1998."},
                {"tag": "a", "text": "About us", "target": ABOUT},
                {"tag": "a", "text": "Contact", "target": CONTACT},
                {"tag": "a", "text": "Track your order", "target": TRACK},
                {"tag": "a", "text": "Partner program", "target": DEAD},
                {"tag": "p", "text": "Copyright ACME Outfitters"},
            ],
            "facts": {"store_name": "ACME Outfitters"},
        },
        ABOUT: {
            "title": "About ACME",
            "elements": [
                {"tag": "h1", "text": "About ACME"},
                {"tag": "p", "text": "ACME Trading Ltd operates this store."},
                {"tag": "p", "text": "Company registration number RN-4471-22."},
                {"tag": "a", "text": "Home", "target": HOME},
            ],
            "facts": {"registration_number": "RN-4471-22", "legal_entity": "ACME Trading Ltd"},
        },
        CONTACT: {
            "title": "Contact us",
            "elements": [
                {"tag": "h1", "text": "Contact us"},
                {"tag": "a", "text": "Home", "target": HOME},
                {"tag": "a", "text": "Payment options", "target": CHECKOUT},
                {"tag": "p", "text": "We answer within two business days."},
                {"tag": "p", "text": "Opening hours: Mon-Fri 9-17."},
                {"tag": "p", "text": "Returns are accepted for 30 days."},
                {"tag": "p", "text": "Warehouse: Leipzig."},
                {"tag": "a", "text": "Report abuse", "target": ABOUT},
                {"tag": "p", "text": "Support: help@acme.example"},
            ],
            "facts": {"support_email": "help@acme.example"},
        },
        TRACK: {
            "title": "Track an order",
            "elements": [
                {"tag": "h1", "text": "Track an order"},
                {"tag": "input", "text": "Order number", "target": RESULT, "requires": {"0": "A-1001"}},
                {"tag": "select", "text": "Carrier", "options": ["DHL", "UPS"]},
                {"tag": "button", "text": "Track", "target": RESULT, "requires": {"0": "A-1001", "1": "DHL"}},
                {"tag": "a", "text": "Home", "target": HOME},
            ],
            "facts": {},
        },
        RESULT: {
            "title": "Order A-1001",
            "elements": [
                {"tag": "h1", "text": "Order A-1001"},
                {"tag": "p", "text": "Status: In transit"},
                {"tag": "a", "text": "Back to tracking", "target": TRACK},
            ],
            "facts": {"shipment_status": "In transit"},
        },
        CHECKOUT: {
            "title": "Secure checkout",
            "elements": [
                {"tag": "h1", "text": "Secure checkout"},
                {"tag": "p", "text": "Payments are handled by PayFlow."},
                {"tag": "select", "text": "Payment method", "options": ["Card", "Bank transfer"]},
                {"tag": "a", "text": "Home", "target": HOME},
            ],
            "facts": {"payment_processor": "PayFlow"},
        },
    },
    "search_index": {
        "acme outfitters store": [HOME],
        "acme registration company": [ABOUT],
        "acme payment checkout": [CHECKOUT, CONTACT],
    },
}

TASKS = [
    TaskSpec("t01", "What is the name of the store?", "information_search", ("store_name",)),
    TaskSpec("t02", "Find the company registration number of the merchant.", "information_search", ("registration_number",)),
    TaskSpec("t03", "Which payment processor does the merchant use?", "information_search", ("payment_processor",)),
    TaskSpec("t04", "Look up the shipment status of order A-1001.", "information_search", ("shipment_status",)),
    TaskSpec("t05", "Verify that the merchant's checkout page is reachable.", "website_verification", (), CHECKOUT),
    TaskSpec(
        "t06",
        "Collect the registration number and legal entity of the merchant.",
        "information_search",
        ("registration_number", "legal_entity"),
    ),
    TaskSpec("t07", "Find the merchant's support email address.", "information_search", ("support_email",)),
]

EXAMPLE = "<example>Q: find the price of X. A: click_element_by_index{index=3}</example> "


def _raw_corpus(site) -> list[Trajectory]:
    """Oracle episodes plus deliberate defects for the curation pipeline."""
    trajs = [replace(oracle_episode(site, t, f"raw-{t.id}"), source="raw") for t in TASKS]
    by_id = {t.id: t for t in trajs}

    # duplicated step: the agent clicked "Track your order" three times
    t = by_id["raw-t04"]
    first = t.steps[0]
    by_id["raw-t04"] = Trajectory.build(t.id, [first, first, first, *t.steps[1:]])

    # failed detour: a click on the dead partner link, then a retry
    t = by_id["raw-t03"]
    s0 = t.steps[0]
    dead_click = replace(
        s0, gold=replace(s0.gold, action=(Action.make("click_element_by_index", index=3),), next_goal="Open partners")
    )
    retry = replace(s0, gold=replace(s0.gold, evaluation_previous_goal="Failed - navigation error on partner page"))
    by_id["raw-t03"] = Trajectory.build(t.id, [dead_click, retry, *t.steps[1:]])

    # prompt contaminated by a one-shot exemplar
    t = by_id["raw-t02"]
    by_id["raw-t02"] = Trajectory.build(t.id, [replace(s, question=EXAMPLE + s.question) for s in t.steps])

    good = [by_id[t.id] for t in trajs]

    # three trajectories the filter must drop
    base = oracle_episode(site, TASKS[5], "raw-bad-unsuccessful")
    last = base.steps[-1]
    failed_done = replace(
        last,
        gold=replace(last.gold, action=last.gold.action[:-1] + (Action.make("done", text="not found", success=False),)),
    )
    bad1 = Trajectory.build(base.id, [*base.steps[:-1], failed_done])

    base = oracle_episode(site, TASKS[3], "raw-bad-missing-gold")
    bad2 = Trajectory.build(base.id, [s if i != 2 else replace(s, gold=None) for i, s in enumerate(base.steps)])

    base = oracle_episode(site, TASKS[2], "raw-bad-incomplete")
    bad3 = Trajectory.build(base.id, base.steps[:-1])

    return good + [bad1, bad2, bad3]


PIPELINE_CONFIG = {
    "failure_markers": ["Failed", "Unknown"],
    "example_delimiters": ["<example>", "</example>"],
    "augment_ops": ["template_paraphrase", "drop_screenshot"],
    "paraphrase_templates": {
        "synonyms": {
            "Find": ["Look up", "Locate"],
            "merchant": ["seller", "shop"],
            "What is": ["Tell me", "Report"],
        }
    },
    "grader": "rule",
    "k": 5,
    "seed": 0,
}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    site = site_from_json(json.loads(json.dumps(SITE)), "site_acme.json")
    save_site(site, OUT / "site_acme.json")
    save_tasks(TASKS, OUT / "tasks_acme.jsonl")
    write_trajectories(_raw_corpus(site), OUT / "raw_trajectories.jsonl")
    (OUT / "pipeline_config.json").write_text(json.dumps(PIPELINE_CONFIG, indent=2) + "\n", encoding="utf-8")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
