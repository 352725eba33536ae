import json
import logging

import requests

logger = logging.getLogger(__name__)

WEBHOOK_TIMEOUT_SECONDS = 10


def post_webhook(url: str, payload: dict, session=None) -> bool:
    """
    POST the payload as JSON. Failures are logged and reported through the
    return value, never raised.
    """
    poster = session or requests
    try:
        response = poster.post(url, json=payload, timeout=WEBHOOK_TIMEOUT_SECONDS)
        response.raise_for_status()
    except requests.RequestException as e:
        logger.warning(json.dumps({"event": "webhook_failed", "test": payload.get("test"), "error": str(e)}))
        return False
    logger.info(json.dumps({"event": "webhook_sent", "test": payload.get("test"), "changes": len(payload.get("changes", []))}))
    return True
