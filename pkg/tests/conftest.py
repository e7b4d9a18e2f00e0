import numpy as np
import pytest

from dvgait import gaitgen, gei


@pytest.fixture(scope="session")
def tiny_geis():
    """2 subjects x 1 sequence x 11 views of real rendered GEIs."""
    specs = gaitgen.sample_subjects(2, seed=31)
    views = [float(v) for v in range(0, 181, 18)]
    out = []
    for spec in specs:
        for view in views:
            seq = gaitgen.generate_sequence(spec, view, "nm01", cycles=1, frames_per_cycle=8)
            out.append(gei.compute_gei(seq))
    return out


@pytest.fixture(scope="session")
def random_geis():
    """Fast synthetic GEI stand-ins (not rendered); 3 subjects x 2 seqs x 3 views."""
    rng = np.random.default_rng(5)
    out = []
    for sid in ("001", "002", "003"):
        for seq in ("nm01", "nm02"):
            for view in (0.0, 18.0, 36.0):
                out.append(
                    gei.GEI(
                        pixels=rng.random((64, 64)).astype(np.float32),
                        subject_id=sid,
                        sequence_id=seq,
                        view_deg=view,
                    ).validate()
                )
    return out
