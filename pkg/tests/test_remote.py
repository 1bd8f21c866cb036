import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from toolgrpo.core import RunConfig, ToolSelection
from toolgrpo.environment import (
    EnvironmentFailure,
    RemoteConfig,
    RemoteEnvironment,
    RemoteProtocolError,
    remote_reason,
    remote_tool,
)
from toolgrpo.environment.remote import RemoteClient
from toolgrpo.environment.stub_server import StubServer
from toolgrpo.grpo import train
from toolgrpo.metrics import evaluate_policy
from toolgrpo.policy import PolicyParams

from .conftest import make_query


def config_for(stub, **kw):
    kw.setdefault("timeout", 2.0)
    kw.setdefault("backoff", 0.0)
    return RemoteConfig(stub.reason_url, [stub.tool_url] * stub.num_tools, **kw)


@pytest.fixture
def stub():
    with StubServer(3, gold={"q": "42"}) as server:
        yield server


def test_reason_echoes_gold(stub):
    client = RemoteClient(config_for(stub))
    verdict = remote_reason(client, stub.reason_url, make_query([0.0], qid="q", gold="42"), ["x"])
    assert verdict.answer == "42" and verdict.correct is None


def test_tool_returns_output(stub):
    client = RemoteClient(config_for(stub))
    assert remote_tool(client, stub.tool_url, 1, make_query([0.0], qid="q")) == "[tool 1] summary for q"


def test_timeout_twice_then_success(stub):
    stub.timeout_sleep = 0.6
    stub.script("/reason", ["timeout", "timeout"])
    client = RemoteClient(config_for(stub, timeout=0.2, retries=3))
    verdict = remote_reason(client, stub.reason_url, make_query([0.0], qid="q"), [])
    assert verdict.answer == "42"
    assert client.stats.retries == 2 and client.stats.failures == 0
    assert stub.calls["/reason"] == 3


def test_malformed_after_all_retries(stub):
    stub.script("/reason", ["malformed"] * 3)
    client = RemoteClient(config_for(stub, retries=3))
    with pytest.raises(EnvironmentFailure):
        remote_reason(client, stub.reason_url, make_query([0.0], qid="q"), [])
    assert stub.calls["/reason"] == 3 and client.stats.failures == 1


def test_server_error_is_retried(stub):
    stub.script("/tool", ["error"])
    client = RemoteClient(config_for(stub))
    assert remote_tool(client, stub.tool_url, 0, make_query([0.0], qid="q")).startswith("[tool 0]")
    assert client.stats.retries == 1


def test_unknown_tool_is_protocol_error(stub):
    client = RemoteClient(config_for(stub))
    with pytest.raises(RemoteProtocolError):
        remote_tool(client, stub.tool_url, 7, make_query([0.0], qid="q"))
    assert stub.calls["/tool"] == 1


def test_concurrency_cap():
    with StubServer(8, delay=0.1) as stub:
        client = RemoteClient(config_for(stub, max_concurrency=2))
        q = make_query([0.0], qid="q")
        start = time.perf_counter()
        with ThreadPoolExecutor(8) as pool:
            outs = list(pool.map(lambda i: remote_tool(client, stub.tool_url, i, q), range(8)))
        elapsed = time.perf_counter() - start
    assert stub.peak_in_flight == 2 and client.stats.peak_in_flight == 2
    assert elapsed >= 0.35
    assert outs == [f"[tool {i}] summary for q" for i in range(8)]


def test_concurrent_distinct_tools_order_insensitive():
    with StubServer(6, delay=0.02) as stub:
        client = RemoteClient(config_for(stub, max_concurrency=6))
        q = make_query([0.0], qid="q")
        order = [5, 0, 3, 1, 4, 2]
        with ThreadPoolExecutor(6) as pool:
            outs = dict(zip(order, pool.map(lambda i: remote_tool(client, stub.tool_url, i, q), order)))
    assert outs == {i: f"[tool {i}] summary for q" for i in range(6)}


def test_config_from_dict_and_env_overrides():
    cfg = RemoteConfig.from_dict({"reason_url": "http://r", "tool_urls": "http://t"}, num_tools=3)
    assert cfg.tool_urls == ["http://t"] * 3
    over = cfg.with_env_overrides({"TOOLGRPO_REASON_URL": "http://r2", "TOOLGRPO_TOOL_URL_1": "http://t1"})
    assert over.reason_url == "http://r2" and over.tool_urls == ["http://t", "http://t1", "http://t"]
    with pytest.raises(ValueError):
        RemoteConfig("http://r", [])


def test_remote_eval_matches_simulator_schema(bundled, bundled_env):
    library, train_ds, eval_ds, profiles = bundled
    queries = list(eval_ds)[:10]
    gold = {q.id: q.gold_answer for q in queries}
    policy = PolicyParams(np.zeros((9, 16)), np.array([-1, 1, 1, -1, -1, -1, -1, 1, -1], dtype=float))
    sim = evaluate_policy(policy, queries, library, bundled_env)
    with StubServer(9, gold=gold, profiles={q.id: profiles[q.id] for q in queries}) as stub:
        env = RemoteEnvironment(config_for(stub))
        remote = evaluate_policy(policy, queries, library, env, workers=4)
    assert remote.to_dict().keys() == sim.to_dict().keys()
    assert remote.failed == 0 and len(remote.verdicts) == 10
    assert remote.accuracy == sim.accuracy
    assert remote.verdicts == sim.verdicts


def test_remote_eval_counts_failed_queries(bundled):
    library, _, eval_ds, _ = bundled
    queries = list(eval_ds)[:4]
    with StubServer(9, gold={q.id: q.gold_answer for q in queries}) as stub:
        stub.script("/reason", ["error"] * 2)
        env = RemoteEnvironment(config_for(stub, retries=2))
        report = evaluate_policy(PolicyParams.zeros(9, 16), queries, library, env)
    assert report.failed == 1 and len(report.verdicts) == 3


def test_remote_training_runs(bundled):
    library, train_ds, _, profiles = bundled
    queries = list(train_ds)[:8]
    with StubServer(9, gold={q.id: q.gold_answer for q in queries}, profiles=profiles) as stub:
        env = RemoteEnvironment(config_for(stub))
        result = train(RunConfig(iterations=2, batch_size=4, workers=4), queries, library, env)
    assert len(result.stats) == 2 and all(s.failed_episodes == 0 for s in result.stats)
