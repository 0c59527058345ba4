import itertools
import os
import random

import pytest

from jmpath.analysis import (
    CaptureSet,
    Knowledge,
    attempt_reconstruction,
    capture,
    leakage_scan,
    reconstruction_table,
)
from jmpath.pipeline import Keys
from jmpath.simulate import run_simulated_transfer
from jmpath.transport import AdversaryConfig, RouteAdversary


def tapped_run(payload, keys, n, m, seed=0):
    adv = AdversaryConfig(default=RouteAdversary(captured=True))
    return run_simulated_transfer([payload], keys, n, m, adv, seed=seed)


class TestLeakageScan:
    def test_identical_strings(self):
        data = os.urandom(500)
        assert leakage_scan(data, data) == 500

    def test_disjoint_alphabets(self):
        assert leakage_scan(b"\x00" * 100, b"\x01" * 100) == 0

    def test_empty_inputs(self):
        assert leakage_scan(b"", b"abc") == 0
        assert leakage_scan(b"abc", b"") == 0

    def test_known_overlap(self):
        assert leakage_scan(b"xxHELLOyy", b"aaHELLObb") == 5

    def test_matches_dp_oracle(self):
        # quadratic dynamic-programming LCS as the independent oracle
        def dp_lcs(a, b):
            best = 0
            prev = [0] * (len(b) + 1)
            for i in range(1, len(a) + 1):
                cur = [0] * (len(b) + 1)
                for j in range(1, len(b) + 1):
                    if a[i - 1] == b[j - 1]:
                        cur[j] = prev[j - 1] + 1
                        best = max(best, cur[j])
                prev = cur
            return best

        rng = random.Random(17)
        for _ in range(30):
            a = bytes(rng.randrange(4) for _ in range(rng.randint(0, 120)))
            b = bytes(rng.randrange(4) for _ in range(rng.randint(0, 120)))
            assert leakage_scan(a, b) == dp_lcs(a, b)


class TestCapture:
    def test_empty_subset(self, keys):
        run = tapped_run(os.urandom(200), keys, 4, 3)
        cap = capture(run.events, [])
        assert cap.frames == ()

    def test_all_routes_all_frames(self, keys):
        run = tapped_run(os.urandom(200), keys, 4, 3)
        cap = capture(run.events, range(3))
        assert len(cap.frames) == run.outcomes[0].report.total_frames

    def test_single_route_bundle_count(self, keys):
        # route 0 of m=3 carries ceil(n/v) bundles
        run = tapped_run(os.urandom(200), keys, 4, 3)
        cap = capture(run.events, [0])
        assert len(cap.frames) == run.outcomes[0].report.frames_per_route[0]


class TestReconstruction:
    def test_partial_capture_no_keys_zero_parts(self, keys):
        run = tapped_run(os.urandom(1000), keys, 4, 4)
        mf = run.outcomes[0].manifest
        cap = capture(run.events, [0, 1, 2], Knowledge.NO_KEYS)
        report = attempt_reconstruction(cap, m=4, manifest=mf)
        assert report.parts_complete == 0
        assert report.plaintext_bytes_recovered == 0

    def test_full_capture_with_keys_recovers_everything(self, keys):
        payload = os.urandom(777)
        run = tapped_run(payload, keys, 4, 3)
        mf = run.outcomes[0].manifest
        cap = capture(run.events, range(3), Knowledge.MANIFEST_AND_KEYS)
        report = attempt_reconstruction(cap, m=3, manifest=mf, keys=keys,
                                        plaintext=payload)
        assert report.plaintext_bytes_recovered == len(payload)
        assert report.ngram_leakage == len(payload)

    def test_exhaustive_proper_subsets_blackout(self, keys):
        payload = os.urandom(600)
        for m in (2, 3, 4):
            run = tapped_run(payload, keys, 5, m, seed=m)
            mf = run.outcomes[0].manifest
            for k in range(m):
                for subset in itertools.combinations(range(m), k):
                    for tier in (Knowledge.NO_KEYS, Knowledge.MANIFEST_ONLY):
                        cap = capture(run.events, subset, tier)
                        report = attempt_reconstruction(
                            cap, m=m, manifest=mf, keys=keys, plaintext=payload)
                        assert report.parts_complete == 0
                        assert report.plaintext_bytes_recovered == 0

    def test_manifest_only_full_capture_assembles_but_recovers_nothing(self, keys):
        payload = os.urandom(2048)
        run = tapped_run(payload, keys, 6, 3)
        mf = run.outcomes[0].manifest
        cap = capture(run.events, range(3), Knowledge.MANIFEST_ONLY)
        report = attempt_reconstruction(cap, m=3, manifest=mf,
                                        plaintext=payload)
        assert report.parts_complete == 6
        assert report.plaintext_bytes_recovered == 0
        assert report.ngram_leakage < 64  # masked bytes, no verbatim runs

    def test_monotonic_in_routes_and_knowledge(self, keys):
        payload = os.urandom(512)
        m = 3
        run = tapped_run(payload, keys, 4, m)
        mf = run.outcomes[0].manifest
        tiers = [Knowledge.NO_KEYS, Knowledge.MANIFEST_ONLY,
                 Knowledge.MANIFEST_AND_KEYS]
        subsets = [(), (0,), (0, 1), (0, 1, 2)]
        metric = {}
        for subset in subsets:
            for tier in tiers:
                cap = capture(run.events, subset, tier)
                rep = attempt_reconstruction(cap, m=m, manifest=mf, keys=keys)
                metric[subset, tier] = (rep.parts_complete,
                                        rep.plaintext_bytes_recovered)
        for a, b in zip(subsets, subsets[1:]):
            for tier in tiers:
                assert metric[a, tier] <= metric[b, tier]
        for subset in subsets:
            for ta, tb in zip(tiers, tiers[1:]):
                assert metric[subset, ta] <= metric[subset, tb]

    def test_keystream_leakage_stays_small(self, keys):
        # full capture without keys over a known plaintext: verbatim runs
        # should stay near the birthday-bound noise floor
        payload = os.urandom(16384)
        run = tapped_run(payload, keys, 4, 2, seed=99)
        mf = run.outcomes[0].manifest
        cap = capture(run.events, range(2), Knowledge.MANIFEST_ONLY)
        report = attempt_reconstruction(cap, m=2, manifest=mf,
                                        plaintext=payload)
        assert report.ngram_leakage <= 8

    def test_csv_table(self, keys):
        payload = os.urandom(100)
        run = tapped_run(payload, keys, 2, 2)
        mf = run.outcomes[0].manifest
        caps = [capture(run.events, [0], Knowledge.NO_KEYS),
                capture(run.events, [0, 1], Knowledge.MANIFEST_ONLY)]
        lines = reconstruction_table(caps, m=2, manifest=mf, keys=keys,
                                     plaintext=payload)
        assert lines[0].startswith("routes_captured,knowledge")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "0"
        assert lines[2].split(",")[0] == "0+1"
