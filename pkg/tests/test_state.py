import threading

from app.state import RunState, StateManager


def test_update_ignores_unknown_keys():
    manager = StateManager()
    manager.update(status="running", frames=10, bogus=1)
    assert manager.get("status") == "running"
    assert manager.get("frames") == 10
    assert not hasattr(manager.state, "bogus")


def test_increment_is_thread_safe():
    """Incrementos concorrentes do front-end e do back-end não se perdem"""
    manager = StateManager()

    def work():
        for _ in range(500):
            manager.increment("links_attempted")

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert manager.get("links_attempted") == 2000
    manager.increment("unknown")
    assert manager.get("unknown") is None


def test_report_lines(tmp_path):
    manager = StateManager()
    manager.update(status="done", keyframes=3)
    manager.add_timing("frontend", 1.25)
    manager.add_timing("frontend", 0.5)
    path = tmp_path / "out" / "report.txt"
    manager.save_report(str(path))
    lines = path.read_text().splitlines()
    assert "status: done" in lines
    assert "keyframes: 3" in lines
    assert "time_frontend: 1.750" in lines
    assert len(lines) == len(RunState().to_dict())
