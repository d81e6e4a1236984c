import pytest

from ehtsim.engine import RngStream, SchedulingError, Simulator, ceil_ns, ms, seconds, us


def test_unit_conversion_is_integer_and_exact():
    assert us(9) == 9_000
    assert us(0.1 * 3) == 300  # float noise does not round up
    assert us(13.6) == 13_600
    assert ms(4.096) == 4_096_000
    assert seconds(1.5) == 1_500_000_000
    assert ceil_ns(1000.2) == 1001


def test_events_fire_in_time_then_insertion_order():
    sim = Simulator()
    fired = []
    sim.schedule(50, fired.append, "b")
    sim.schedule(10, fired.append, "a")
    sim.schedule(50, fired.append, "c")
    sim.run_until(100)
    assert fired == ["a", "b", "c"]
    assert sim.now == 100


def test_cancelled_event_does_not_fire():
    sim = Simulator()
    fired = []
    ev = sim.schedule(10, fired.append, 1)
    assert Simulator.cancel(ev)
    assert not Simulator.cancel(ev)
    sim.run_until(20)
    assert fired == []


def test_scheduling_in_the_past_is_an_error():
    sim = Simulator()
    sim.run_until(100)
    with pytest.raises(SchedulingError):
        sim.schedule(99)


def test_events_beyond_horizon_stay_pending():
    sim = Simulator()
    sim.schedule(10)
    sim.schedule(200)
    assert sim.run_until(100) == 1
    assert sim.pending() == 1


def test_trace_records_kind_and_target():
    sim = Simulator(trace=True)
    sim.schedule(5, kind="access", target="ap0/L0")
    sim.run_until(10)
    assert sim.trace == [(5, 0, "access", "ap0/L0")]


def test_substreams_are_independent_and_reproducible():
    a1 = [RngStream(7, "backoff:x").uniform_int(0, 15) for _ in range(1)]
    s = RngStream(7, "backoff:x")
    seq1 = [s.uniform_int(0, 15) for _ in range(50)]
    s2 = RngStream(7, "backoff:x")
    assert seq1 == [s2.uniform_int(0, 15) for _ in range(50)]
    other = RngStream(7, "backoff:y")
    assert seq1 != [other.uniform_int(0, 15) for _ in range(50)]
    assert a1[0] == seq1[0]
    # drawing from one stream leaves another untouched
    p = RngStream(3, "p")
    q = RngStream(3, "q")
    ref = [q.uniform() for _ in range(5)]
    p2, q2 = RngStream(3, "p"), RngStream(3, "q")
    for _ in range(100):
        p2.uniform()
    assert [q2.uniform() for _ in range(5)] == ref


def test_bulk_and_scalar_draws_share_the_key():
    s = RngStream(1, "placement")
    x = s.np.uniform(size=3)
    y = RngStream(1, "placement").np.uniform(size=3)
    assert (x == y).all()
