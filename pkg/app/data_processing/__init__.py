# 資料處理模組初始化：軌跡與摘要的輸出入
