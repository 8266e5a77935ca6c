import pickle

import pytest

from sdeselect.errors import (ConfigError, DegenerateFitError, DiffusionFloorError, GridError,
                              IndividualError, LinkError, ModelMismatchError, OptimizationError,
                              PriorError, ReplicateError, SDESelectError, SeriesFormatError,
                              SimulationError, StoreError)

INSTANCES = [
    GridError("bad grid"),
    LinkError("log of -1"),
    ModelMismatchError("arity"),
    PriorError("negative sd"),
    ConfigError("grid.t_end must be > grid.t0"),
    StoreError("cannot write out.csv"),
    SeriesFormatError("missing or non-numeric cell", row=4),
    SeriesFormatError("need at least 2 rows, got 1"),
    SimulationError("non-finite state", step=17),
    DiffusionFloorError(1e-12, 3),
    OptimizationError("no finite objective"),
    DegenerateFitError("constant path"),
    IndividualError(2, SeriesFormatError("bad cell", row=1)),
    ReplicateError(5, SimulationError("non-finite state", step=9)),
]


class TestPickling:
    @pytest.mark.parametrize("exc", INSTANCES, ids=lambda e: type(e).__name__)
    def test_survives_pickle(self, exc):
        back = pickle.loads(pickle.dumps(exc))
        assert type(back) is type(exc)
        assert str(back) == str(exc)
        plain = [a for a in exc.args if not isinstance(a, BaseException)]
        assert [a for a in back.args if not isinstance(a, BaseException)] == plain
        assert len(back.args) == len(exc.args)
        assert set(vars(back)) == set(vars(exc))

    def test_messages(self):
        assert str(SeriesFormatError("bad cell", row=4)) == "row 4: bad cell"
        assert str(SeriesFormatError("bad cell")) == "bad cell"
        assert str(SimulationError("non-finite state", step=17)) == "non-finite state (step 17)"
        assert str(DiffusionFloorError(0.0, 3)) == "diffusion 0.0 below floor at grid index 3"
        nested = ReplicateError(5, SimulationError("non-finite state", step=9))
        assert str(nested) == "replicate 5: non-finite state (step 9)"
        assert str(IndividualError(2, ValueError("x"))) == "individual 2: x"

    def test_attributes_restored(self):
        back = pickle.loads(pickle.dumps(ReplicateError(5, SimulationError("non-finite state", step=9))))
        assert back.replicate == 5
        assert isinstance(back.cause, SimulationError)
        assert back.cause.step == 9
        floor = pickle.loads(pickle.dumps(DiffusionFloorError(1e-12, 3)))
        assert (floor.value, floor.index) == (1e-12, 3)

    def test_hierarchy(self):
        for exc in INSTANCES:
            assert isinstance(exc, SDESelectError)
        assert isinstance(ConfigError("x"), ValueError)
        assert isinstance(SeriesFormatError("x"), ValueError)

