"""Walk through the comparison arena service end to end, in process.

Register policies and executions, qualify an annotator with the gold quiz,
judge blinded pairs, read the leaderboard, and show that replaying the event
log reproduces it bit for bit.
"""

import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from policyarena.service import ArenaStore, GoldPair, create_app

workdir = Path(tempfile.mkdtemp())

# Ten gold pairs with known answers gate who may judge.
gold = [GoldPair(f"g{k}", f"gold/left{k}.mp4", f"gold/right{k}.mp4", "LEFT")
        for k in range(10)]
store = ArenaStore(workdir / "events.jsonl", gold, seed=0)
client = TestClient(create_app(store))

# --- operators register policies and their recorded executions -------------
for policy in ("helper-bot", "baseline-bot"):
    client.post("/policies", json={"policy_id": policy})
    for k in range(4):
        client.post("/executions", json={
            "execution_id": f"{policy}-{k}",
            "policy": policy,
            "environment_id": "kitchen-sim",
            "task": "put the sponge in the sink",
            "video_uri": f"videos/{hash((policy, k)) & 0xffffff:06x}.mp4",
            "initial_condition_hash": f"ic-{k}",
        })

# --- an annotator qualifies via the quiz (needs 8 of 10) -------------------
quiz = client.get("/quiz").json()
responses = [{"pair_id": p["pair_id"], "choice": "LEFT"} for p in quiz["pairs"]]
result = client.post("/quiz", json={"annotator": "casey", "responses": responses}).json()
print(f"quiz: {result['correct']}/10 correct, passed={result['passed']}")
headers = {"X-Annotator-Token": result["token"]}

# --- judging loop: pairs are blinded and coin-flipped ----------------------
# The annotator sees only video URIs. To script a 3-1 outcome we peek at the
# store (something a real annotator cannot do) to find which side is which.
uri_to_policy = {e.video_uri: e.policy for e in store.executions.values()}
for winner in ("helper-bot", "helper-bot", "helper-bot", "baseline-bot"):
    pair = client.get("/pairs/next", headers=headers).json()
    choice = "LEFT" if uri_to_policy[pair["left_video_uri"]] == winner else "RIGHT"
    client.post("/preferences", headers=headers, json={
        "pair_id": pair["pair_id"],
        "choice": choice,
        "rationale": "grasp looked more stable",
    })
print("judged 4 blinded pairs, 3-1 for helper-bot")

# --- leaderboard ------------------------------------------------------------
board = client.get("/leaderboard").json()
print("\nleaderboard:")
for row in board["ranking"]:
    print(f"  {row['rank']}. {row['policy']:<14} beta={row['beta']:+.3f}")
print(f"counts: {board['counts']}")

# --- deterministic replay ----------------------------------------------------
replayed = ArenaStore(workdir / "events.jsonl", gold, seed=99).leaderboard()
print(f"\nreplaying the event log reproduces the leaderboard: {replayed == board}")
