import os

# Tests never write the runtime event log
os.environ["FOCUSED_KV_EVENT_LOG"] = "0"
