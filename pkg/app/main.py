import logging

from fastapi import FastAPI

from app.api.routes import router as api_router
from app.config import get_settings

settings = get_settings()
logging.basicConfig(
    level=getattr(logging, settings.log_level, logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s %(message)s",
)

app = FastAPI(title="Spotflow API", version="0.1.0")
app.include_router(api_router)


@app.get("/health")
def health():
    return {
        "status": "ok",
        "app_env": settings.app_env,
        "threads": settings.threads,
    }
